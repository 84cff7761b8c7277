"""Run configuration: desk-scale defaults, TOML loading, flag overrides.

The TOML schema mirrors the component configs one table per component:

    [phantom]        image_size, n_samples, seed, follicle_count_range,
                     ovary_axis_range, follicle_axis_range, echogenicity,
                     train_fraction
    [canny]          gaussian_sigma, low_threshold, high_threshold
    [generator]      input_channels, base_width, n_downsample,
                     n_residual_blocks, output_channels, upsample_mode
    [discriminator]  input_channels, hidden
    [train]          base_resolution, grown_resolution, phase_epochs,
                     batch_size, lambda_l1, lr_g, lr_d, alpha_increment,
                     alpha_step_unit, seed, plateau, plateau_patience,
                     plateau_min_improve, quick_fid_n, saturating,
                     use_sketch
    [metrics]        extractor_seed

Unknown tables or keys are rejected.  Overrides use dotted keys, e.g.
``--set train.batch_size=8``.
"""

from __future__ import annotations

import dataclasses

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .phantom import ConfigurationError, PhantomConfig
from .sgan import DiscriminatorConfig, GeneratorConfig
from .sketch import CannyParams
from .trainer import PhasePlan


@dataclass
class MetricOptions:
    extractor_seed: int = 42


@dataclass
class TrainOptions(PhasePlan):
    use_sketch: bool = True


@dataclass
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    canny: CannyParams = field(default_factory=CannyParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainOptions = field(default_factory=TrainOptions)
    metrics: MetricOptions = field(default_factory=MetricOptions)


_TUPLE_KEYS = {"follicle_count_range", "ovary_axis_range",
               "follicle_axis_range", "phase_epochs", "hidden"}


def _assign(obj, key: str, value, where: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigurationError(f"unknown key {where}.{key}")
    current = getattr(obj, key)
    if isinstance(value, str) and key in _TUPLE_KEYS:
        value = [float(v) if "." in v else int(v)
                 for v in value.split(",") if v]
    if key == "hidden":
        value = tuple(tuple(v) for v in value)
    elif key in _TUPLE_KEYS:
        value = tuple(value)
    elif isinstance(current, bool):
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        value = bool(value)
    elif isinstance(current, int) and not isinstance(value, bool):
        value = int(value)
    elif isinstance(current, float):
        value = float(value)
    setattr(obj, key, value)


def load_run_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path, "rb") as f:
            data = tomllib.load(f)
        for section, table in data.items():
            if not hasattr(cfg, section):
                raise ConfigurationError(f"unknown config table [{section}]")
            target = getattr(cfg, section)
            if not isinstance(table, dict):
                raise ConfigurationError(f"[{section}] must be a table")
            for key, value in table.items():
                _assign(target, key, value, section)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override must look like a.b=v: {item}")
        dotted, value = item.split("=", 1)
        if "." not in dotted:
            raise ConfigurationError(f"override key must be dotted: {dotted}")
        section, key = dotted.split(".", 1)
        if not hasattr(cfg, section):
            raise ConfigurationError(f"unknown config table [{section}]")
        _assign(getattr(cfg, section), key, value, section)
    cfg.phantom.validate()
    cfg.canny.validate()
    cfg.train.validate()
    return cfg
