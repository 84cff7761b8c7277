"""Canny edge extraction and composite conditional labels.

The conditional input is a 3-channel map: one-hot ovary mask, one-hot
follicle mask, and a background edge sketch.  The sketch channel is
forced to zero wherever an object mask is set, so edits to the sketch
never leak into the object region.

The Canny implementation is the classical 5-stage pipeline (Gaussian
smoothing, Sobel gradients, 4-bin direction quantization, non-maximum
suppression, double-threshold hysteresis).  Convolutions accumulate
kernel taps in a fixed raster order so results are reproducible across
vectorized and per-pixel implementations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError, SizeError
from .phantom import Sample

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class CannyParams:
    gaussian_sigma: float = 1.4
    low_threshold: float = 0.1    # fraction of the max gradient magnitude
    high_threshold: float = 0.25

    def validate(self):
        if self.gaussian_sigma <= 0:
            raise DataError("gaussian_sigma must be > 0")
        if not (0 < self.low_threshold < self.high_threshold <= 1):
            raise DataError(
                "thresholds must satisfy 0 < low < high <= 1, got "
                f"({self.low_threshold}, {self.high_threshold})")


def gaussian_kernel_5x5(sigma: float) -> np.ndarray:
    ax = np.arange(5, dtype=np.float64) - 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def convolve_replicate(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2D correlation with replicated borders, accumulating taps in raster
    order (matches a per-pixel loop bit-for-bit)."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(image, ((ph, ph), (pw, pw)), mode="edge")
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out


# neighbor offsets (dy, dx) per quantized gradient direction bin
_DIRECTION_OFFSETS = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}


def quantize_directions(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    return (np.round(theta / (np.pi / 4)).astype(np.int64)) % 4


def canny(image: np.ndarray, params: CannyParams | None = None) -> np.ndarray:
    """Binary edge map (H, W) of a (1, H, W) or (H, W) grayscale image."""
    params = params or CannyParams()
    params.validate()
    if image.ndim == 3:
        image = image[0]
    h, w = image.shape
    if h < 5 or w < 5:
        raise SizeError(f"image must be at least 5x5, got {h}x{w}")

    smoothed = convolve_replicate(image.astype(np.float64),
                                  gaussian_kernel_5x5(params.gaussian_sigma))
    gx = convolve_replicate(smoothed, SOBEL_X)
    gy = convolve_replicate(smoothed, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy)
    m_max = mag.max()
    if m_max == 0.0:
        return np.zeros((h, w), dtype=np.uint8)

    bins = quantize_directions(gx, gy)
    # non-maximum suppression: strict > toward the backward neighbor and
    # >= toward the forward one, so plateau ties keep exactly one pixel;
    # the 1-pixel border is suppressed
    kept = np.zeros((h, w), dtype=bool)
    interior = np.s_[1:h - 1, 1:w - 1]
    for b, (dy, dx) in _DIRECTION_OFFSETS.items():
        fwd = mag[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        bwd = mag[1 - dy:h - 1 - dy, 1 - dx:w - 1 - dx]
        sel = (bins[interior] == b) & (mag[interior] > bwd) & (mag[interior] >= fwd)
        kept[interior] |= sel

    nms_mag = np.where(kept, mag, 0.0)
    strong = nms_mag >= params.high_threshold * m_max
    candidate = nms_mag >= params.low_threshold * m_max
    # weak pixels survive iff 8-connected (transitively) to a strong pixel
    labels, n = ndimage.label(candidate, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros((h, w), dtype=np.uint8)
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels != 0]
    edges = np.isin(labels, strong_labels) & candidate
    return edges.astype(np.uint8)


def compose_label(mask: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Build the (3, H, W) composite label from a class mask and edge map.

    Channel 0: ovary (class 1), channel 1: follicle (class 2),
    channel 2: sketch restricted to background.
    """
    if mask.shape != edges.shape:
        raise SizeError(f"mask {mask.shape} and edges {edges.shape} differ")
    classes = np.unique(mask)
    if not np.all(np.isin(classes, [0, 1, 2])):
        raise DataError(f"unknown mask classes: {sorted(set(classes) - {0, 1, 2})}")
    label = np.zeros((3,) + mask.shape, dtype=np.float32)
    label[0] = mask == 1
    label[1] = mask == 2
    label[2] = (edges > 0) & (mask == 0)
    return label


def label_from_sample(sample: Sample, params: CannyParams | None = None) -> np.ndarray:
    return compose_label(sample.mask, canny(sample.image, params))


def sanitize_label(label: np.ndarray) -> np.ndarray:
    """Re-enforce label invariants: mask channels mutually exclusive
    (follicle wins) and sketch zero under either mask."""
    out = (label > 0.5).astype(np.float32)
    out[0] *= 1.0 - out[1]
    out[2] *= (1.0 - out[0]) * (1.0 - out[1])
    return out


def save_label_png(label: np.ndarray, path):
    """Serialize to the interchange format: RGB PNG, R=ovary, G=follicle,
    B=sketch, 255=on."""
    rgb = np.clip(np.round(label * 255), 0, 255).astype(np.uint8)
    Image.fromarray(rgb.transpose(1, 2, 0), mode="RGB").save(path)


def load_label_png(path_or_file) -> np.ndarray:
    im = Image.open(path_or_file).convert("RGB")
    arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return sanitize_label(arr)
