"""Procedural ultrasound-like phantom generator.

Produces paired (speckled grayscale image, segmentation mask) samples:
an ovary ellipse on brighter background tissue, with near-anechoic
follicle ellipses strictly inside the ovary and a bright 2-pixel rim at
the ovary boundary.  Everything is deterministic in (seed, config).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from PIL import Image
from scipy import ndimage


class ConfigurationError(ValueError):
    """Raised when a config field violates its invariants."""


@dataclass
class PhantomConfig:
    image_size: int = 64
    n_samples: int = 256
    seed: int = 1
    follicle_count_range: tuple[int, int] = (1, 6)
    ovary_axis_range: tuple[float, float] = (0.45, 0.7)
    follicle_axis_range: tuple[float, float] = (0.08, 0.3)
    echogenicity: dict = field(default_factory=lambda: {
        "background": 0.55,
        "ovary": 0.45,
        "follicle": 0.08,
        "rim_gain": 1.4,
    })
    train_fraction: float = 0.87

    def validate(self):
        s = self.image_size
        if s < 32 or (s & (s - 1)) != 0:
            raise ConfigurationError(
                f"image_size must be a power of two >= 32, got {s}")
        lo, hi = self.follicle_count_range
        if lo < 0 or hi < lo:
            raise ConfigurationError(
                f"follicle_count_range must be 0 <= min <= max, got {(lo, hi)}")
        for name in ("ovary_axis_range", "follicle_axis_range"):
            a, b = getattr(self, name)
            if not (0 < a <= b <= 1):
                raise ConfigurationError(
                    f"{name} must satisfy 0 < min <= max <= 1, got {(a, b)}")
        for key in ("background", "ovary", "follicle"):
            v = self.echogenicity.get(key)
            if v is None or not (0 <= v <= 1):
                raise ConfigurationError(
                    f"echogenicity.{key} must be in [0,1], got {v}")
        if self.echogenicity.get("rim_gain", 0) <= 0:
            raise ConfigurationError("echogenicity.rim_gain must be > 0")
        if not (0 < self.train_fraction < 1):
            raise ConfigurationError(
                f"train_fraction must be in (0,1), got {self.train_fraction}")


@dataclass
class Sample:
    image: np.ndarray   # (1, H, W) float32 in [0,1]
    mask: np.ndarray    # (H, W) uint8, classes 0/1/2
    sample_id: str
    base_tissue: np.ndarray | None = None  # noise-free map, kept for oracles


@dataclass
class Manifest:
    entries: list
    train_ids: list
    test_ids: list
    config: PhantomConfig

    def to_json(self) -> str:
        return json.dumps({
            "entries": self.entries,
            "train_ids": self.train_ids,
            "test_ids": self.test_ids,
            "config": asdict(self.config),
        }, indent=2)

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as f:
            d = json.load(f)
        cfg = d["config"]
        cfg["follicle_count_range"] = tuple(cfg["follicle_count_range"])
        cfg["ovary_axis_range"] = tuple(cfg["ovary_axis_range"])
        cfg["follicle_axis_range"] = tuple(cfg["follicle_axis_range"])
        return cls(d["entries"], d["train_ids"], d["test_ids"],
                   PhantomConfig(**cfg))


def _ellipse_region(size, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _inside_ovary(cy, cx, ry, rx, o_cy, o_cx, o_ry, o_rx, margin):
    # sample the candidate follicle boundary; every point must sit inside
    # the ovary ellipse shrunk by `margin` pixels
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    by = cy + ry * np.sin(t)
    bx = cx + rx * np.cos(t)
    d = ((by - o_cy) / (o_ry - margin)) ** 2 + ((bx - o_cx) / (o_rx - margin)) ** 2
    return bool(np.all(d < 1.0))


def generate_phantom(seed: int, config: PhantomConfig,
                     sample_id: str | None = None) -> Sample:
    """Generate one phantom sample deterministically from (seed, config)."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    size = config.image_size
    echo = config.echogenicity

    # ovary geometry: axis lengths are fractions of the image size
    o_ry = rng.uniform(*config.ovary_axis_range) * size / 2
    o_rx = rng.uniform(*config.ovary_axis_range) * size / 2
    o_cy = size / 2 + rng.uniform(-1, 1) * (size / 2 - o_ry - 3)
    o_cx = size / 2 + rng.uniform(-1, 1) * (size / 2 - o_rx - 3)

    mask = np.zeros((size, size), dtype=np.uint8)
    ovary = _ellipse_region(size, o_cy, o_cx, o_ry, o_rx)
    mask[ovary] = 1

    n_follicles = int(rng.integers(config.follicle_count_range[0],
                                   config.follicle_count_range[1] + 1))
    placed = []  # (cy, cx, ry, rx)
    f_lo, f_hi = config.follicle_axis_range
    for _ in range(n_follicles):
        ry = max(2.0, rng.uniform(f_lo, f_hi) * o_ry)
        rx = max(2.0, rng.uniform(f_lo, f_hi) * o_rx)
        for attempt in range(400):
            # shrink stubborn candidates so the requested count is always met
            if attempt and attempt % 100 == 0:
                ry = max(2.0, ry * 0.8)
                rx = max(2.0, rx * 0.8)
            ang = rng.uniform(0, 2 * np.pi)
            rad = np.sqrt(rng.uniform(0, 1))
            cy = o_cy + rad * (o_ry - ry - 3) * np.sin(ang)
            cx = o_cx + rad * (o_rx - rx - 3) * np.cos(ang)
            if not _inside_ovary(cy, cx, ry, rx, o_cy, o_cx, o_ry, o_rx, 3.0):
                continue
            r_self = max(ry, rx)
            if any(np.hypot(cy - py, cx - px) <= r_self + max(pry, prx) + 2.0
                   for py, px, pry, prx in placed):
                continue
            placed.append((cy, cx, ry, rx))
            break
    for cy, cx, ry, rx in placed:
        mask[_ellipse_region(size, cy, cx, ry, rx)] = 2

    base = np.full((size, size), echo["background"], dtype=np.float64)
    base[mask == 1] = echo["ovary"]
    rim = ovary & ~ndimage.binary_erosion(ovary, iterations=2)
    base[rim] = min(1.0, echo["ovary"] * echo["rim_gain"])
    base[mask == 2] = echo["follicle"]
    base = ndimage.gaussian_filter(base, sigma=size / 32, mode="nearest")

    g1 = rng.standard_normal((size, size))
    g2 = rng.standard_normal((size, size))
    speckle = ndimage.uniform_filter((g1 ** 2 + g2 ** 2) / 2, size=3,
                                     mode="nearest")

    image = np.clip(base * speckle, 0.0, 1.0).astype(np.float32)[None]
    return Sample(image=image, mask=mask,
                  sample_id=sample_id or f"s{seed:06d}",
                  base_tissue=base.astype(np.float32))


def train_count(n: int, fraction: float) -> int:
    """Round-half-up train-split size, never below 1 for nonempty datasets."""
    return max(1, int(np.floor(n * fraction + 0.5)))


def sample_seed(dataset_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([dataset_seed, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(config: PhantomConfig, out_dir) -> Manifest:
    """Write n_samples phantoms as PNGs plus a manifest.json under out_dir."""
    config.validate()
    if config.n_samples == 0:
        raise ConfigurationError("n_samples must be >= 1")
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    entries = []
    ids = []
    for i in range(config.n_samples):
        sid = f"s{i:06d}"
        sample = generate_phantom(sample_seed(config.seed, i), config,
                                  sample_id=sid)
        image_path = os.path.join("images", f"{sid}.png")
        mask_path = os.path.join("masks", f"{sid}.png")
        save_image_png(sample.image, os.path.join(out_dir, image_path))
        save_mask_png(sample.mask, os.path.join(out_dir, mask_path))
        entries.append({"sample_id": sid, "image_path": image_path,
                        "mask_path": mask_path})
        ids.append(sid)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB11D]))
    order = rng.permutation(len(ids))
    n_train = train_count(len(ids), config.train_fraction)
    train_ids = sorted(ids[i] for i in order[:n_train])
    test_ids = sorted(ids[i] for i in order[n_train:])

    manifest = Manifest(entries, train_ids, test_ids, config)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        f.write(manifest.to_json())
    return manifest


def save_image_png(image: np.ndarray, path):
    arr = np.clip(np.round(image[0] * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def save_mask_png(mask: np.ndarray, path):
    im = Image.fromarray(mask.astype(np.uint8), mode="P")
    palette = [0, 0, 0, 128, 128, 128, 255, 255, 255] + [0] * (256 - 3) * 3
    im.putpalette(palette)
    im.save(path)


def load_image_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return arr[None]


def load_mask_png(path) -> np.ndarray:
    im = Image.open(path)
    return np.asarray(im, dtype=np.uint8)


def load_sample(data_dir, entry) -> Sample:
    return Sample(
        image=load_image_png(os.path.join(data_dir, entry["image_path"])),
        mask=load_mask_png(os.path.join(data_dir, entry["mask_path"])),
        sample_id=entry["sample_id"],
    )
