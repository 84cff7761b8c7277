"""Minimal layer engine with exact reverse-mode gradients.

All tensors are rank-4 numpy arrays (batch, channels, height, width).
Each layer caches what its backward pass needs during forward; backward
accumulates parameter gradients with += (so multiple applications of a
shared layer sum correctly) and returns the input gradient.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, SizeError, StateError

_DEBUG_CHECKS = False


def set_debug_checks(on: bool):
    """Enable NaN/Inf assertions after every forward/backward."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


def _check(x, where):
    if _DEBUG_CHECKS and not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values after {where}")


def conv_out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._ctx = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gout):
        raise NotImplementedError

    def children(self):
        return []

    def describe(self) -> str:
        return type(self).__name__


def named_params(layer: Layer, prefix: str = ""):
    for k in layer.params:
        yield prefix + k, layer.params[k]
    for name, child in layer.children():
        yield from named_params(child, f"{prefix}{name}.")


def named_grads(layer: Layer, prefix: str = ""):
    for k in layer.grads:
        yield prefix + k, layer.grads[k]
    for name, child in layer.children():
        yield from named_grads(child, f"{prefix}{name}.")


def zero_grads(layer: Layer):
    for _, g in named_grads(layer):
        g[...] = 0


def cast_dtype(layer: Layer, dtype):
    """Replace all parameter/gradient buffers with the given dtype (used by
    the 64-bit gradient-check build)."""
    for lay in _walk(layer):
        for k in lay.params:
            lay.params[k] = lay.params[k].astype(dtype)
            lay.grads[k] = lay.grads[k].astype(dtype)


def _walk(layer: Layer):
    yield layer
    for _, child in layer.children():
        yield from _walk(child)


def _im2col(xp, k, s, ho, wo):
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (b, c, k, k, ho, wo), (sb, sc, sh, sw, sh * s, sw * s))
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, c * k * k)


class Conv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, weight_std=0.02):
        super().__init__()
        self.cin, self.cout, self.k, self.stride, self.pad = cin, cout, k, stride, pad
        rng = rng or np.random.default_rng(0)
        w = (rng.standard_normal((cout, cin, k, k)) * weight_std).astype(np.float32)
        self.params = {"weight": w, "bias": np.zeros(cout, np.float32)}
        self.grads = {k_: np.zeros_like(v) for k_, v in self.params.items()}

    def describe(self):
        return f"Conv2d({self.cin},{self.cout},k{self.k},s{self.stride},p{self.pad})"

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.cin:
            raise SizeError(f"{self.describe()}: expected {self.cin} input "
                            f"channels, got {c}")
        k, s, p = self.k, self.stride, self.pad
        ho, wo = conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _im2col(xp, k, s, ho, wo)
        w2 = self.params["weight"].reshape(self.cout, -1)
        out = cols @ w2.T + self.params["bias"]
        out = np.ascontiguousarray(
            out.reshape(b, ho, wo, self.cout).transpose(0, 3, 1, 2))
        self._ctx = (cols, x.shape, (ho, wo))
        _check(out, self.describe())
        return out

    def backward(self, gout):
        if self._ctx is None:
            raise StateError(f"{self.describe()}: backward before forward")
        cols, xshape, (ho, wo) = self._ctx
        b, c, h, w = xshape
        k, s, p = self.k, self.stride, self.pad
        g2 = gout.transpose(0, 2, 3, 1).reshape(-1, self.cout)
        w2 = self.params["weight"].reshape(self.cout, -1)
        self.grads["weight"] += (g2.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += g2.sum(axis=0)
        dcols = (g2 @ w2).reshape(b, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=gout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        _check(dx, self.describe() + ".backward")
        return dx


class ConvTranspose2d(Layer):
    """Transposed convolution; output size = (H-1)*s + k - 2p."""

    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, weight_std=0.02):
        super().__init__()
        self.cin, self.cout, self.k, self.stride, self.pad = cin, cout, k, stride, pad
        rng = rng or np.random.default_rng(0)
        w = (rng.standard_normal((cin, cout, k, k)) * weight_std).astype(np.float32)
        self.params = {"weight": w, "bias": np.zeros(cout, np.float32)}
        self.grads = {k_: np.zeros_like(v) for k_, v in self.params.items()}

    def describe(self):
        return (f"ConvTranspose2d({self.cin},{self.cout},k{self.k},"
                f"s{self.stride},p{self.pad})")

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.cin:
            raise SizeError(f"{self.describe()}: expected {self.cin} input "
                            f"channels, got {c}")
        k, s, p = self.k, self.stride, self.pad
        hf, wf = (h - 1) * s + k, (w - 1) * s + k
        x2 = x.transpose(0, 2, 3, 1).reshape(b * h * w, c)
        w2 = self.params["weight"].reshape(self.cin, -1)
        cols = (x2 @ w2).reshape(b, h, w, self.cout, k, k).transpose(0, 3, 4, 5, 1, 2)
        outp = np.zeros((b, self.cout, hf, wf), dtype=cols.dtype)
        for i in range(k):
            for j in range(k):
                outp[:, :, i:i + s * (h - 1) + 1:s, j:j + s * (w - 1) + 1:s] += \
                    cols[:, :, i, j]
        out = outp[:, :, p:hf - p, p:wf - p] if p else outp
        out = out + self.params["bias"][None, :, None, None]
        self._ctx = (x2, (b, h, w), (out.shape[2], out.shape[3]))
        _check(out, self.describe())
        return np.ascontiguousarray(out)

    def backward(self, gout):
        if self._ctx is None:
            raise StateError(f"{self.describe()}: backward before forward")
        x2, (b, h, w), _ = self._ctx
        k, s, p = self.k, self.stride, self.pad
        gp = np.pad(gout, ((0, 0), (0, 0), (p, p), (p, p))) if p else gout
        sb, sc, sh, sw = gp.strides
        win = np.lib.stride_tricks.as_strided(
            gp, (b, self.cout, k, k, h, w), (sb, sc, sh, sw, sh * s, sw * s))
        cols_g = win.transpose(0, 4, 5, 1, 2, 3).reshape(b * h * w, -1)
        w2 = self.params["weight"].reshape(self.cin, -1)
        dx = (cols_g @ w2.T).reshape(b, h, w, self.cin).transpose(0, 3, 1, 2)
        self.grads["weight"] += (x2.T @ cols_g).reshape(self.params["weight"].shape)
        self.grads["bias"] += gout.sum(axis=(0, 2, 3))
        _check(dx, self.describe() + ".backward")
        return np.ascontiguousarray(dx)


class InstanceNorm(Layer):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.channels, self.eps = channels, eps
        self.params = {"gamma": np.ones(channels, np.float32),
                       "beta": np.zeros(channels, np.float32)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def describe(self):
        return f"InstanceNorm({self.channels})"

    def forward(self, x):
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        out = self.params["gamma"][None, :, None, None] * xhat \
            + self.params["beta"][None, :, None, None]
        self._ctx = (xhat, inv)
        _check(out, self.describe())
        return out

    def backward(self, gout):
        if self._ctx is None:
            raise StateError("InstanceNorm: backward before forward")
        xhat, inv = self._ctx
        self.grads["gamma"] += (gout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += gout.sum(axis=(0, 2, 3))
        gh = gout * self.params["gamma"][None, :, None, None]
        n = xhat.shape[2] * xhat.shape[3]
        dx = inv / n * (n * gh
                        - gh.sum(axis=(2, 3), keepdims=True)
                        - xhat * (gh * xhat).sum(axis=(2, 3), keepdims=True))
        _check(dx, self.describe() + ".backward")
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._ctx = x > 0
        return x * self._ctx

    def backward(self, gout):
        return gout * self._ctx


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def describe(self):
        return f"LeakyReLU({self.slope})"

    def forward(self, x):
        self._ctx = x > 0
        return np.where(self._ctx, x, self.slope * x)

    def backward(self, gout):
        return np.where(self._ctx, gout, self.slope * gout)


class Tanh(Layer):
    def forward(self, x):
        out = np.tanh(x)
        self._ctx = out
        return out

    def backward(self, gout):
        return gout * (1.0 - self._ctx ** 2)


class Sigmoid(Layer):
    def forward(self, x):
        out = 1.0 / (1.0 + np.exp(-x))
        self._ctx = out
        return out

    def backward(self, gout):
        return gout * self._ctx * (1.0 - self._ctx)


def upsample2x(x):
    """Nearest-neighbor 2x replication."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def downsample2x(x):
    """2x2 average pooling."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise SizeError(f"downsample2x needs even dims, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


class Resize(Layer):
    def __init__(self, mode):
        super().__init__()
        if mode not in ("up", "down"):
            raise ValueError("mode must be 'up' or 'down'")
        self.mode = mode

    def describe(self):
        return f"Resize({self.mode})"

    def forward(self, x):
        self._ctx = x.shape
        return upsample2x(x) if self.mode == "up" else downsample2x(x)

    def backward(self, gout):
        b, c, h, w = gout.shape
        if self.mode == "up":
            return gout.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
        return upsample2x(gout) / 4.0


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), lay) for i, lay in enumerate(self.layers)]

    def describe(self):
        return "Sequential[" + ",".join(l.describe() for l in self.layers) + "]"

    def forward(self, x):
        for lay in self.layers:
            x = lay.forward(x)
        return x

    def backward(self, gout):
        for lay in reversed(self.layers):
            gout = lay.backward(gout)
        return gout


class ResidualBlock(Layer):
    """conv-IN-relu-conv-IN plus identity skip (no activation after add)."""

    def __init__(self, channels, rng=None):
        super().__init__()
        self.channels = channels
        self.body = Sequential([
            Conv2d(channels, channels, 3, 1, 1, rng=rng),
            InstanceNorm(channels),
            ReLU(),
            Conv2d(channels, channels, 3, 1, 1, rng=rng),
            InstanceNorm(channels),
        ])

    def children(self):
        return [("body", self.body)]

    def describe(self):
        return f"ResidualBlock({self.channels})"

    def forward(self, x):
        return x + self.body.forward(x)

    def backward(self, gout):
        return gout + self.body.backward(gout)
