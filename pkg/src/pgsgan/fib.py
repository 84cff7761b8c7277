"""Fade-in blocks: residual alpha-blend between a new convolutional path
and a plain resize path, used when growing the networks to the next
resolution.

FIB-D halves the spatial resolution (used at the input of both networks
after growth); FIB-U doubles it and blends in image space through a
to-image convolution shared with the trunk, so at alpha=0 a freshly
grown network computes exactly the un-grown function composed with a
plain resize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn.layers import (Conv2d, Layer, LeakyReLU, Sequential, StateError,
                        downsample2x, upsample2x)


@dataclass
class FibState:
    alpha: float = 0.0
    increment: float = 1.0 / 30.0
    ceiling: float = 1.0
    step_unit: str = "per-optimizer-step"
    steps: int = field(default=0)


def alpha_update(state: FibState) -> FibState:
    """Advance the fade-in schedule one step: alpha = min(k*inc, ceiling).

    Computed from the integer step counter (not accumulated) so that 30
    increments of 1/30 land on exactly 1.0.
    """
    state.steps += 1
    state.alpha = min(state.steps * state.increment, state.ceiling)
    return state


class ChannelAdapt(Layer):
    """Fixed (non-learned) 1x1 channel replication/truncation projection.

    Identity passthrough when channel counts already match.
    """

    def __init__(self, cin, cout):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.identity = cin == cout
        if not self.identity:
            proj = np.zeros((cout, cin), dtype=np.float32)
            for c in range(cout):
                proj[c, c % cin] = 1.0
            self.proj = proj

    def describe(self):
        return f"ChannelAdapt({self.cin}->{self.cout})"

    def forward(self, x):
        if self.identity:
            return x
        return np.einsum("oc,bchw->bohw", self.proj, x)

    def backward(self, gout):
        if self.identity:
            return gout
        return np.einsum("oc,bohw->bchw", self.proj, gout)


class FibD(Layer):
    """Downsampling fade-in block: alpha*main(x) + (1-alpha)*adapt(pool(x)).

    Main path: two k3 convs with leaky-relu at the incoming (new)
    resolution, then 2x average-pool down to the trunk resolution.
    """

    def __init__(self, cin, cout, rng=None, state: FibState | None = None):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.state = state or FibState()
        self.main = Sequential([
            Conv2d(cin, cout, 3, 1, 1, rng=rng), LeakyReLU(0.2),
            Conv2d(cout, cout, 3, 1, 1, rng=rng), LeakyReLU(0.2),
        ])
        self.adapt = ChannelAdapt(cin, cout)

    def children(self):
        return [("main", self.main)]

    def describe(self):
        return f"FibD({self.cin}->{self.cout})"

    def forward(self, x):
        a = self.state.alpha
        main = downsample2x(self.main.forward(x))
        skip = self.adapt.forward(downsample2x(x))
        self._ctx = True
        return a * main + (1.0 - a) * skip

    def backward(self, gout):
        if self._ctx is None:
            raise StateError("FibD: backward before forward")
        a = self.state.alpha
        g_main = upsample2x(a * gout) / 4.0
        g_skip = upsample2x(self.adapt.backward((1.0 - a) * gout)) / 4.0
        return self.main.backward(g_main) + g_skip


class FibU(Layer):
    """Upsampling fade-in block blending two candidate output images.

    Skip path: shared to-image conv + tanh on the trunk features, then 2x
    nearest upsample.  Main path: 2x upsample of the features, two k3
    convs with leaky-relu at the new resolution, then the same shared
    to-image conv + tanh.  The to-image conv belongs to the trunk; its
    gradients accumulate over both applications.
    """

    def __init__(self, channels, to_image: Conv2d, rng=None,
                 state: FibState | None = None):
        super().__init__()
        self.channels = channels
        self.to_image = to_image  # shared with the trunk; not a child here
        self.state = state or FibState(ceiling=0.5)
        self.main = Sequential([
            Conv2d(channels, channels, 3, 1, 1, rng=rng), LeakyReLU(0.2),
            Conv2d(channels, channels, 3, 1, 1, rng=rng), LeakyReLU(0.2),
        ])

    def children(self):
        return [("main", self.main)]

    def describe(self):
        return f"FibU({self.channels})"

    def forward(self, f):
        a = self.state.alpha
        img_lo = np.tanh(self.to_image.forward(f))
        ctx_skip = self.to_image._ctx
        skip_img = upsample2x(img_lo)

        feats = self.main.forward(upsample2x(f))
        img_hi = np.tanh(self.to_image.forward(feats))
        ctx_main = self.to_image._ctx

        self._ctx = (img_lo, img_hi, ctx_skip, ctx_main)
        return a * img_hi + (1.0 - a) * skip_img

    def backward(self, gout):
        if self._ctx is None:
            raise StateError("FibU: backward before forward")
        img_lo, img_hi, ctx_skip, ctx_main = self._ctx
        a = self.state.alpha
        b, c, h, w = gout.shape

        # main branch
        g_hi = (a * gout) * (1.0 - img_hi ** 2)
        self.to_image._ctx = ctx_main
        g_feats = self.to_image.backward(g_hi)
        g_fu = self.main.backward(g_feats)
        g_f_main = g_fu.reshape(b, self.channels, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

        # skip branch
        g_lo = ((1.0 - a) * gout).reshape(b, 1, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
        g_lo = g_lo * (1.0 - img_lo ** 2)
        self.to_image._ctx = ctx_skip
        g_f_skip = self.to_image.backward(g_lo)

        return g_f_main + g_f_skip
