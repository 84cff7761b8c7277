"""Central finite-difference gradient checking utilities."""

import numpy as np

from pgsgan.nn.layers import named_grads, named_params, zero_grads


def loss_of(layer, x, weights):
    out = layer.forward(x)
    return float(np.sum(out.astype(np.float64) * weights))


def analytic_grads(layer, x, weights):
    layer.forward(x)
    zero_grads(layer)
    gin = layer.backward(weights.astype(x.dtype))
    grads = {k: g.copy() for k, g in named_grads(layer)}
    zero_grads(layer)
    return gin, grads


def fd_grad(scalar_fn, arr, h):
    """Central differences over every element of arr (mutated in place)."""
    g = np.zeros(arr.size, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        lp = scalar_fn()
        flat[i] = old - h
        lm = scalar_fn()
        flat[i] = old
        g[i] = (lp - lm) / (2.0 * h)
    return g.reshape(arr.shape)


def rel_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(np.asarray(a, np.float64) - np.asarray(b, np.float64)) / denom


def check_layer(layer, x, rng, h=1e-3, tol=1e-3, check_params=True):
    """Assert analytic gradients match finite differences for the input
    and (optionally) every parameter of the layer."""
    weights = rng.standard_normal(layer.forward(x).shape)
    gin, grads = analytic_grads(layer, x, weights)

    fn = lambda: loss_of(layer, x, weights)
    fd_in = fd_grad(fn, x, h)
    err = rel_error(fd_in, gin)
    assert err <= tol, f"input gradient error {err:.2e} > {tol}"

    if check_params:
        # Compare all parameters as one flattened vector.  Per-parameter
        # relative errors blow up on parameters whose true gradient is
        # exactly zero (e.g. a conv bias feeding instance norm, where the
        # mean subtraction cancels it) even though the absolute agreement
        # is perfect.
        fd_all, bp_all = [], []
        for name, p in named_params(layer):
            fd_all.append(fd_grad(fn, p, h).ravel())
            bp_all.append(grads[name].ravel())
        if fd_all:
            err = rel_error(np.concatenate(fd_all), np.concatenate(bp_all))
            assert err <= tol, f"parameter gradient error {err:.2e} > {tol}"
