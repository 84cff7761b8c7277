"""Adam optimizer over a network's named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .layers import Layer, named_grads, named_params


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(net: Layer) -> AdamState:
    state = AdamState()
    for name, p in named_params(net):
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_extend(state: AdamState, net: Layer):
    """Add zeroed moments for parameters that appeared after growth;
    existing moments (and the step counter) are preserved."""
    for name, p in named_params(net):
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)


def adam_step(state: AdamState, net: Layer, lr: float):
    """One bias-corrected Adam update; gradients are zeroed afterward."""
    grads = dict(named_grads(net))
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}; training "
                               "should resume from the last checkpoint")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in named_params(net):
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        g[...] = 0
