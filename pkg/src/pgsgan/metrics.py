"""Evaluation metrics: FID, KID and MS-SSIM, plus a threshold-based
mask-fidelity proxy.

Feature embeddings come from a fixed, seeded, untrained convolutional
stack instead of a pretrained classifier, so absolute FID/KID values are
implementation-relative: only orderings computed on identical data with
the same extractor seed are meaningful.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, SizeError
from .nn.layers import Conv2d, LeakyReLU, Sequential

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class FeatureExtractor:
    """Fixed random conv stack: 3 stride-2 conv+leaky-relu stages and a
    global average pool, mapping (N,1,H,W) images in [0,1] to (N,64)."""

    def __init__(self, seed: int = 42, widths=(16, 32, 64)):
        rng = np.random.default_rng(seed)
        layers = []
        cin = 1
        for w in widths:
            layers.append(Conv2d(cin, w, 3, 2, 1, rng=rng,
                                 weight_std=1.0 / np.sqrt(cin * 9)))
            layers.append(LeakyReLU(0.2))
            cin = w
        self.net = Sequential(layers)
        self.seed = seed
        self.dim = widths[-1]

    def __call__(self, images: np.ndarray) -> np.ndarray:
        feats = []
        for start in range(0, len(images), 32):
            out = self.net.forward(images[start:start + 32].astype(np.float32))
            feats.append(out.mean(axis=(2, 3)))
        return np.concatenate(feats).astype(np.float64)


def fid(real_feats: np.ndarray, synth_feats: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of the two feature sets."""
    for name, f in (("real", real_feats), ("synth", synth_feats)):
        if len(f) < 2:
            raise DataError(f"fid needs >= 2 {name} samples, got {len(f)}")
    mu_r = real_feats.mean(axis=0)
    mu_s = synth_feats.mean(axis=0)
    d = real_feats.shape[1]
    ridge = 1e-6 * np.eye(d)
    cov_r = np.cov(real_feats, rowvar=False, ddof=1) + ridge
    cov_s = np.cov(synth_feats, rowvar=False, ddof=1) + ridge

    # sqrt(cov_r) via symmetric eigendecomposition, eigenvalues clamped at 0
    w, v = np.linalg.eigh(cov_r)
    sqrt_r = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    w2 = np.linalg.eigvalsh(sqrt_r @ cov_s @ sqrt_r)
    tr_sqrt = np.sqrt(np.maximum(w2, 0.0)).sum()

    diff = mu_r - mu_s
    return float(diff @ diff + np.trace(cov_r) + np.trace(cov_s) - 2.0 * tr_sqrt)


def _poly_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** 3


def kid(real_feats: np.ndarray, synth_feats: np.ndarray) -> float:
    """Unbiased squared MMD with a degree-3 polynomial kernel (raw value;
    callers multiply by 100 for reporting)."""
    m, n = len(real_feats), len(synth_feats)
    if m < 2 or n < 2:
        raise DataError(f"kid needs >= 2 samples per set, got {m} and {n}")
    kxx = _poly_kernel(real_feats, real_feats)
    kyy = _poly_kernel(synth_feats, synth_feats)
    kxy = _poly_kernel(real_feats, synth_feats)
    sum_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sum_xx + sum_yy - 2.0 * kxy.mean())


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    h, w = img.shape
    sh, sw = img.strides
    view = np.lib.stride_tricks.as_strided(
        img, (h - k + 1, w - k + 1, k, k), (sh, sw, sh, sw))
    out = view.reshape(-1, k * k) @ win.ravel()
    return out.reshape(h - k + 1, w - k + 1)


def _ssim_components(a, b, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = _gaussian_window()
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a ** 2
    var_b = _filter_valid(b * b, win) - mu_b ** 2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    cs_map = (2 * cov + c2) / (var_a + var_b + c2)
    l_map = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return l_map, cs_map


def _avgpool2(img):
    h, w = img.shape
    img = img[:h - h % 2, :w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Multi-scale structural similarity between two grayscale images.

    Scale count is the largest s <= 5 with min_dim / 2^(s-1) >= 16;
    the standard 5 weights are truncated to that count and renormalized.
    Negative contrast-structure means are clamped at 0 before the
    weighted geometric combination.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        a = a[0]
    if b.ndim == 3:
        b = b[0]
    if a.shape != b.shape:
        raise SizeError(f"shape mismatch {a.shape} vs {b.shape}")
    min_dim = min(a.shape)
    if min_dim < 16:
        raise SizeError(f"images too small for ms_ssim: min dim {min_dim}")
    n_scales = 1
    while n_scales < 5 and min_dim // 2 ** n_scales >= 16:
        n_scales += 1
    weights = np.array(MS_SSIM_WEIGHTS[:n_scales])
    weights /= weights.sum()

    vals = []
    for s in range(n_scales):
        l_map, cs_map = _ssim_components(a, b, data_range)
        if s == n_scales - 1:
            vals.append((l_map * cs_map).mean())
        else:
            vals.append(cs_map.mean())
            a = _avgpool2(a)
            b = _avgpool2(b)
    vals = np.maximum(np.array(vals), 0.0)
    return float(np.prod(vals ** weights))


def mask_fidelity(synth: np.ndarray, label: np.ndarray) -> float:
    """Dice between the darkest-15% region of the synthesized image inside
    the ovary and the follicle mask channel."""
    if synth.ndim == 3:
        synth = synth[0]
    if synth.shape != label.shape[1:]:
        raise SizeError(f"shape mismatch {synth.shape} vs {label.shape[1:]}")
    ovary_region = (label[0] > 0.5) | (label[1] > 0.5)
    follicle = label[1] > 0.5
    if ovary_region.any():
        thr = np.percentile(synth[ovary_region], 15)
        dark = ovary_region & (synth < thr)
    else:
        dark = np.zeros_like(ovary_region)
    if not follicle.any():
        return 1.0 if dark.sum() <= 0.005 * synth.size else 0.0
    inter = np.logical_and(dark, follicle).sum()
    return float(2.0 * inter / (dark.sum() + follicle.sum()))


def evaluate_synthesis(synth_images: np.ndarray, real_images: np.ndarray,
                       labels: np.ndarray, extractor_seed: int = 42) -> dict:
    """Dataset-level metric report.

    synth_images and real_images are (N,1,H,W) in [0,1] with synth[i]
    generated from labels[i], the label of real[i].
    """
    fx = FeatureExtractor(seed=extractor_seed)
    real_feats = fx(real_images)
    synth_feats = fx(synth_images)
    return {
        "fid": fid(real_feats, synth_feats),
        "kid_x100": 100.0 * kid(real_feats, synth_feats),
        "ms_ssim": float(np.mean([
            ms_ssim(synth_images[i], real_images[i])
            for i in range(len(synth_images))])),
        "mask_fidelity_dice": float(np.mean([
            mask_fidelity(synth_images[i], labels[i])
            for i in range(len(synth_images))])),
        "n_real": int(len(real_images)),
        "n_synth": int(len(synth_images)),
        "extractor_seed": extractor_seed,
    }
