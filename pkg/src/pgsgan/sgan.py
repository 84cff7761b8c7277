"""Conditional GAN backbone: encoder-decoder generator, PatchGAN
discriminator, adversarial + L1 losses, alternating train step.

The generator maps a composite label (object masks + background sketch)
to a single-channel image in [-1, 1].  The discriminator judges
(label, image) pairs patch-wise through a grid of sigmoid outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, SizeError
from .fib import FibD, FibU
from .nn.layers import (Conv2d, ConvTranspose2d, InstanceNorm, Layer,
                        LeakyReLU, ReLU, ResidualBlock, Resize, Sequential,
                        conv_out_size, named_grads, named_params)

LOG_CLAMP = 1e-7


@dataclass
class GeneratorConfig:
    input_channels: int = 3
    base_width: int = 16        # 64 for the full-scale configuration
    n_downsample: int = 2
    n_residual_blocks: int = 4  # 10 for the full-scale configuration
    output_channels: int = 1
    upsample_mode: str = "resize"  # "resize" (default) or "transposed"


@dataclass
class DiscriminatorConfig:
    input_channels: int = 4  # label channels + image channel, concatenated
    # (out_channels, stride) for each hidden k4 conv; a final k4 s1 conv
    # maps to the 1-channel patch grid
    hidden: tuple = ((16, 2), (32, 2), (64, 1))

    @classmethod
    def full(cls):
        return cls(hidden=((64, 2), (128, 2), (256, 2), (512, 1)))


@dataclass
class LossReport:
    d_loss: float
    g_adv_loss: float
    g_l1_loss: float
    g_total: float


class Generator(Layer):
    def __init__(self, cfg: GeneratorConfig, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        w = cfg.base_width
        layers = [Conv2d(cfg.input_channels, w, 3, 1, 1, rng=rng),
                  InstanceNorm(w), ReLU()]
        widths = [w * 2 ** i for i in range(cfg.n_downsample + 1)]
        for i in range(cfg.n_downsample):
            layers += [Conv2d(widths[i], widths[i + 1], 3, 2, 1, rng=rng),
                       InstanceNorm(widths[i + 1]), ReLU()]
        for _ in range(cfg.n_residual_blocks):
            layers.append(ResidualBlock(widths[-1], rng=rng))
        for i in reversed(range(cfg.n_downsample)):
            if cfg.upsample_mode == "transposed":
                layers += [ConvTranspose2d(widths[i + 1], widths[i], 4, 2, 1,
                                           rng=rng)]
            else:
                layers += [Resize("up"),
                           Conv2d(widths[i + 1], widths[i], 3, 1, 1, rng=rng)]
            layers += [InstanceNorm(widths[i]), ReLU()]
        self.body = Sequential(layers)
        self.to_image = Conv2d(w, cfg.output_channels, 3, 1, 1, rng=rng)
        self.in_fib: FibD | None = None
        self.out_fib: FibU | None = None

    @property
    def grown(self):
        return self.out_fib is not None

    def children(self):
        out = []
        if self.in_fib is not None:
            out.append(("in_fib", self.in_fib))
        out += [("body", self.body), ("to_image", self.to_image)]
        if self.out_fib is not None:
            out.append(("out_fib", self.out_fib))
        return out

    def describe(self):
        return "Generator[" + ",".join(
            f"{n}:{c.describe()}" for n, c in self.children()) + "]"

    def forward(self, x):
        if self.in_fib is not None:
            x = self.in_fib.forward(x)
        f = self.body.forward(x)
        if self.out_fib is not None:
            return self.out_fib.forward(f)
        out = np.tanh(self.to_image.forward(f))
        self._ctx = out
        return out

    def backward(self, gout):
        if self.out_fib is not None:
            gf = self.out_fib.backward(gout)
        else:
            gf = self.to_image.backward(gout * (1.0 - self._ctx ** 2))
        gx = self.body.backward(gf)
        if self.in_fib is not None:
            gx = self.in_fib.backward(gx)
        return gx


class Discriminator(Layer):
    def __init__(self, cfg: DiscriminatorConfig, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        layers = []
        cin = cfg.input_channels
        for i, (cout, stride) in enumerate(cfg.hidden):
            layers.append(Conv2d(cin, cout, 4, stride, 1, rng=rng))
            if i > 0:  # no normalization on the first layer
                layers.append(InstanceNorm(cout))
            layers.append(LeakyReLU(0.2))
            cin = cout
        layers.append(Conv2d(cin, 1, 4, 1, 1, rng=rng))
        self.trunk = Sequential(layers)
        self.in_fib: FibD | None = None
        self._sig = None

    @property
    def grown(self):
        return self.in_fib is not None

    def children(self):
        out = []
        if self.in_fib is not None:
            out.append(("in_fib", self.in_fib))
        out.append(("trunk", self.trunk))
        return out

    def describe(self):
        return "Discriminator[" + ",".join(
            f"{n}:{c.describe()}" for n, c in self.children()) + "]"

    def forward(self, x_label, img):
        if x_label.shape[0] != img.shape[0] or x_label.shape[2:] != img.shape[2:]:
            raise SizeError(f"label {x_label.shape} and image {img.shape} "
                            "are not aligned")
        z = np.concatenate([x_label, img], axis=1)
        self._label_channels = x_label.shape[1]
        if self.in_fib is not None:
            z = self.in_fib.forward(z)
        logits = self.trunk.forward(z)
        self._sig = 1.0 / (1.0 + np.exp(-logits))
        return self._sig

    def backward(self, gout):
        """Returns the gradient w.r.t. the image input (label grad dropped)."""
        g = gout * self._sig * (1.0 - self._sig)
        g = self.trunk.backward(g)
        if self.in_fib is not None:
            g = self.in_fib.backward(g)
        return g[:, self._label_channels:]


def patch_grid_size(cfg: DiscriminatorConfig, input_size: int) -> int:
    """Closed-form output grid size of the discriminator stack."""
    s = input_size
    for _, stride in cfg.hidden:
        s = conv_out_size(s, 4, stride, 1)
    return conv_out_size(s, 4, 1, 1)


def _clamped_log(x):
    return np.log(np.maximum(x, LOG_CLAMP))


def compute_losses(d_real, d_fake, y, g_x, lam: float,
                   saturating: bool = False) -> LossReport:
    """Adversarial + L1 losses (all mean-reduced, in nats)."""
    for grid in (d_real, d_fake):
        if np.any(grid < 0) or np.any(grid > 1):
            raise NumericError("discriminator grid outside [0,1]")
    d_loss = float(-_clamped_log(d_real).mean() - _clamped_log(1.0 - d_fake).mean())
    if saturating:
        g_adv = float(_clamped_log(1.0 - d_fake).mean())
    else:
        g_adv = float(-_clamped_log(d_fake).mean())
    g_l1 = float(np.abs(y - g_x).mean())
    return LossReport(d_loss=d_loss, g_adv_loss=g_adv, g_l1_loss=g_l1,
                      g_total=g_adv + lam * g_l1)


def _dgrid_real_grad(d_real):
    n = d_real.size
    return np.where(d_real > LOG_CLAMP, -1.0 / (n * np.maximum(d_real, LOG_CLAMP)),
                    0.0)


def _dgrid_fake_grad_for_d(d_fake):
    n = d_fake.size
    one_m = 1.0 - d_fake
    return np.where(one_m > LOG_CLAMP, 1.0 / (n * np.maximum(one_m, LOG_CLAMP)),
                    0.0)


def _dgrid_fake_grad_for_g(d_fake, saturating):
    n = d_fake.size
    if saturating:
        one_m = 1.0 - d_fake
        return np.where(one_m > LOG_CLAMP,
                        -1.0 / (n * np.maximum(one_m, LOG_CLAMP)), 0.0)
    return np.where(d_fake > LOG_CLAMP,
                    -1.0 / (n * np.maximum(d_fake, LOG_CLAMP)), 0.0)


@dataclass
class TrainStepOptions:
    lam: float = 100.0
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    saturating: bool = False


def train_step(g: Generator, d: Discriminator, x_g, y, adam_g, adam_d,
               opts: TrainStepOptions, x_d_real=None, x_d_fake=None,
               bridge: bool = False) -> LossReport:
    """One alternating update: D on (real, detached fake), then G through D.

    With ``bridge=True`` (phase 2 of the progressive schedule) the fake
    image and its label are nearest-upsampled 2x before the discriminator
    while real pairs stay at native resolution; ``x_d_real``/``x_d_fake``
    carry the discriminator-side labels in that case.

    Returns the losses measured before either update.
    """
    from .nn.adam import adam_step
    from .nn.layers import upsample2x, zero_grads

    if x_d_real is None:
        x_d_real = x_g
    if x_d_fake is None:
        x_d_fake = x_g

    fake = g.forward(x_g)
    fake_d = upsample2x(fake) if bridge else fake

    # --- discriminator update (fake detached) ---
    zero_grads(d)
    d_real = d.forward(x_d_real, y)
    d.backward(_dgrid_real_grad(d_real))
    d_fake = d.forward(x_d_fake, fake_d)
    d.backward(_dgrid_fake_grad_for_d(d_fake))
    report = compute_losses(d_real, d_fake, y, fake_d, opts.lam,
                            opts.saturating)
    adam_step(adam_d, d, opts.lr_d)

    # --- generator update through the (updated) discriminator ---
    zero_grads(g)
    zero_grads(d)  # D gradients from this pass are discarded
    d_fake2 = d.forward(x_d_fake, fake_d)
    g_img = d.backward(_dgrid_fake_grad_for_g(d_fake2, opts.saturating))
    g_img = g_img + (-np.sign(y - fake_d) * (opts.lam / fake_d.size))
    if bridge:
        b, c, h, w = g_img.shape
        g_img = g_img.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    g.backward(g_img.astype(fake.dtype))
    adam_step(adam_g, g, opts.lr_g)
    zero_grads(d)
    return report


def count_params(net: Layer) -> int:
    return sum(p.size for _, p in named_params(net))


def grad_norms(net: Layer) -> dict:
    return {k: float(np.abs(g).max()) for k, g in named_grads(net)}
