from .layers import (
    Layer, Conv2d, ConvTranspose2d, InstanceNorm, ReLU, LeakyReLU, Tanh,
    Sigmoid, Resize, ResidualBlock, Sequential, upsample2x, downsample2x,
    named_params, named_grads, set_debug_checks,
)
from .adam import AdamState, adam_init, adam_step

__all__ = [
    "Layer", "Conv2d", "ConvTranspose2d", "InstanceNorm", "ReLU", "LeakyReLU",
    "Tanh", "Sigmoid", "Resize", "ResidualBlock", "Sequential",
    "upsample2x", "downsample2x", "named_params", "named_grads",
    "set_debug_checks", "AdamState", "adam_init", "adam_step",
]
