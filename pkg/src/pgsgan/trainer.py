"""Four-phase progressive training schedule.

Phase 1 trains both networks at the base resolution.  Phase 2 grows the
discriminator (FIB-D prepended) and trains against native high-resolution
real pairs while the still-small generator's outputs and labels are
nearest-upsampled to match.  Phase 3 grows the generator (FIB-D at the
input, FIB-U before the output) so it runs end-to-end at the grown
resolution.  Phase 4 trains the grown pair to convergence.  Trunk weight
tensors persist across growth, so every phase-1 parameter keeps learning
until the end.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .checkpoint import (grow_discriminator_net, grow_generator_net,
                         save_checkpoint)
from .errors import NumericError, SizeError, StateError
from .fib import alpha_update
from .nn.adam import adam_extend, adam_init
from .nn.layers import downsample2x, named_grads, upsample2x, zero_grads
from .phantom import Manifest, load_sample
from .sgan import (Discriminator, DiscriminatorConfig, Generator,
                   GeneratorConfig, TrainStepOptions, train_step,
                   _dgrid_fake_grad_for_g, _dgrid_fake_grad_for_d,
                   _dgrid_real_grad)
from .sketch import CannyParams, compose_label, canny


@dataclass
class PhasePlan:
    base_resolution: int = 32
    grown_resolution: int = 64
    phase_epochs: tuple[int, int, int, int] = (40, 10, 10, 60)
    batch_size: int = 4
    lambda_l1: float = 100.0
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    alpha_increment: float = 1.0 / 30.0
    alpha_step_unit: str = "per-optimizer-step"  # or "per-epoch"
    seed: int = 0
    plateau: bool = False
    plateau_patience: int = 5
    plateau_min_improve: float = 0.01
    quick_fid_n: int = 32
    saturating: bool = False

    def validate(self):
        if self.grown_resolution != 2 * self.base_resolution:
            raise StateError("grown_resolution must be 2x base_resolution")
        if any(e < 1 for e in self.phase_epochs):
            raise StateError("every phase epoch count must be >= 1")
        if self.alpha_step_unit not in ("per-optimizer-step", "per-epoch"):
            raise StateError(f"bad alpha_step_unit {self.alpha_step_unit!r}")


@dataclass
class TrainingData:
    labels_lo: np.ndarray   # (N, 3, base, base)
    labels_hi: np.ndarray   # (N, 3, grown, grown)
    y_lo: np.ndarray        # (N, 1, base, base) in [-1, 1]
    y_hi: np.ndarray        # (N, 1, grown, grown) in [-1, 1]
    images_hi: np.ndarray   # (N, 1, grown, grown) in [0, 1]
    train_idx: np.ndarray
    test_idx: np.ndarray


def prepare_training_data(manifest: Manifest, data_dir,
                          canny_params: CannyParams | None = None,
                          base_resolution: int = 32,
                          use_sketch: bool = True) -> TrainingData:
    """Load the dataset and precompute composite labels at both resolutions.

    With ``use_sketch=False`` the sketch channel is zeroed everywhere --
    the mask-only ablation input.
    """
    params = canny_params or CannyParams()
    by_id = {e["sample_id"]: i for i, e in enumerate(manifest.entries)}
    labels_lo, labels_hi, y_lo, y_hi, images = [], [], [], [], []
    for entry in manifest.entries:
        s = load_sample(data_dir, entry)
        if s.image.shape[1] != 2 * base_resolution:
            raise SizeError(
                f"dataset resolution {s.image.shape[1]} does not match the "
                f"plan's grown resolution {2 * base_resolution}")
        img_lo = downsample2x(s.image[None])[0]
        mask_lo = s.mask[::2, ::2]
        labels_hi.append(compose_label(s.mask, canny(s.image, params)))
        labels_lo.append(compose_label(mask_lo, canny(img_lo, params)))
        images.append(s.image)
        y_hi.append(2.0 * s.image - 1.0)
        y_lo.append(2.0 * img_lo - 1.0)
    labels_lo = np.stack(labels_lo)
    labels_hi = np.stack(labels_hi)
    if not use_sketch:
        labels_lo[:, 2] = 0.0
        labels_hi[:, 2] = 0.0
    return TrainingData(
        labels_lo=labels_lo, labels_hi=labels_hi,
        y_lo=np.stack(y_lo).astype(np.float32),
        y_hi=np.stack(y_hi).astype(np.float32),
        images_hi=np.stack(images).astype(np.float32),
        train_idx=np.array([by_id[i] for i in manifest.train_ids]),
        test_idx=np.array([by_id[i] for i in manifest.test_ids]),
    )


class Trainer:
    def __init__(self, data: TrainingData, plan: PhasePlan,
                 gen_cfg: GeneratorConfig | None = None,
                 disc_cfg: DiscriminatorConfig | None = None,
                 out_dir=None):
        plan.validate()
        self.data = data
        self.plan = plan
        self.out_dir = str(out_dir) if out_dir is not None else None
        rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 0xC0DE]))
        self.g = Generator(gen_cfg or GeneratorConfig(), rng=rng)
        self.d = Discriminator(disc_cfg or DiscriminatorConfig(), rng=rng)
        self.adam_g = adam_init(self.g)
        self.adam_d = adam_init(self.d)
        self.batch_rng = np.random.default_rng(
            np.random.SeedSequence([plan.seed, 0xBA7C4]))
        self.grow_rng = np.random.default_rng(
            np.random.SeedSequence([plan.seed, 0x9804]))
        self.phase = 0            # last completed phase
        self.total_steps = 0
        self.loss_history: list[dict] = []
        self.log_records: list[dict] = []
        self.opts = TrainStepOptions(lam=plan.lambda_l1, lr_g=plan.lr_g,
                                     lr_d=plan.lr_d,
                                     saturating=plan.saturating)
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            self._log_path = os.path.join(self.out_dir, "training_log.jsonl")
            open(self._log_path, "w").close()
        else:
            self._log_path = None

    # ---- phase machinery -------------------------------------------------

    def _phase_batches(self, phase: int):
        idx = self.batch_rng.permutation(self.data.train_idx)
        b = self.plan.batch_size
        for start in range(0, len(idx), b):
            yield idx[start:start + b]

    def _step(self, phase: int, batch) -> "LossReport":
        d_, g_ = self.data, self
        if phase == 1:
            report = train_step(self.g, self.d, d_.labels_lo[batch],
                                d_.y_lo[batch], self.adam_g, self.adam_d,
                                self.opts)
        elif phase == 2:
            report = train_step(
                self.g, self.d, d_.labels_lo[batch], d_.y_hi[batch],
                self.adam_g, self.adam_d, self.opts,
                x_d_real=d_.labels_hi[batch],
                x_d_fake=upsample2x(d_.labels_lo[batch]),
                bridge=True)
        else:
            report = train_step(self.g, self.d, d_.labels_hi[batch],
                                d_.y_hi[batch], self.adam_g, self.adam_d,
                                self.opts)
        self.total_steps += 1
        if self.plan.alpha_step_unit == "per-optimizer-step":
            self._alpha_tick(phase)
        return report

    def _alpha_tick(self, phase: int):
        if phase == 2:
            alpha_update(self.d.in_fib.state)
        elif phase == 3:
            alpha_update(self.g.in_fib.state)
            alpha_update(self.g.out_fib.state)

    def current_resolution(self) -> int:
        return (self.plan.grown_resolution if self.g.grown
                else self.plan.base_resolution)

    def validation_l1(self, n: int | None = None) -> float:
        idx = self.data.test_idx if n is None else self.data.test_idx[:n]
        labels = (self.data.labels_hi if self.g.grown else
                  self.data.labels_lo)
        ys = self.data.y_hi if self.g.grown else self.data.y_lo
        total, count = 0.0, 0
        for start in range(0, len(idx), 8):
            b = idx[start:start + 8]
            fake = self.g.forward(labels[b])
            total += float(np.abs(ys[b] - fake).sum())
            count += fake.size
        return total / count

    def synthesize_test(self, n: int) -> np.ndarray:
        """Generator outputs for the first n test labels, mapped to [0,1]."""
        idx = self.data.test_idx[:n]
        labels = self.data.labels_hi if self.g.grown else self.data.labels_lo
        outs = []
        for start in range(0, len(idx), 8):
            outs.append(self.g.forward(labels[idx[start:start + 8]]))
        return (np.concatenate(outs) + 1.0) / 2.0

    def _quick_fid(self) -> float:
        from .metrics import FeatureExtractor, fid
        n = min(self.plan.quick_fid_n, len(self.data.test_idx))
        if n < 2:
            return float("nan")
        synth = self.synthesize_test(n)
        real = self.data.images_hi[self.data.test_idx[:n]]
        if not self.g.grown:
            real = downsample2x(real)
        fx = FeatureExtractor()
        return fid(fx(real), fx(synth))

    def run_phase(self, phase: int):
        if phase != self.phase + 1:
            raise StateError(f"phase {phase} requested but phase "
                             f"{self.phase + 1} is next")
        if phase == 2 and not self.d.grown:
            raise StateError("phase 2 requires grow_discriminator first")
        if phase >= 3 and not self.g.grown:
            raise StateError(f"phase {phase} requires grow_generator first")
        epochs = self.plan.phase_epochs[phase - 1]
        val_history = []
        for epoch in range(1, epochs + 1):
            t0 = time.time()
            reports = [self._step(phase, b) for b in self._phase_batches(phase)]
            if self.plan.alpha_step_unit == "per-epoch":
                self._alpha_tick(phase)
            record = {
                "phase": phase,
                "epoch": epoch,
                "d_loss": float(np.mean([r.d_loss for r in reports])),
                "g_adv": float(np.mean([r.g_adv_loss for r in reports])),
                "g_l1": float(np.mean([r.g_l1_loss for r in reports])),
                "alpha_d": self.d.in_fib.state.alpha if self.d.grown else None,
                "alpha_g": self.g.in_fib.state.alpha if self.g.grown else None,
                "quick_fid": self._quick_fid(),
                "wall_seconds": None,
            }
            val = self.validation_l1(n=64)
            record["val_l1"] = val
            record["wall_seconds"] = time.time() - t0
            self.loss_history.append(record)
            self._log(record)
            val_history.append(val)
            if self._plateaued(val_history, phase):
                break
        self.phase = phase
        self._checkpoint(f"phase{phase}.ckpt")

    def _plateaued(self, vals, phase) -> bool:
        # never stop a fade-in phase before its alpha schedule completes
        p = self.plan
        if not p.plateau or len(vals) <= p.plateau_patience:
            return False
        if phase in (2, 3) and p.alpha_step_unit == "per-epoch" \
                and len(vals) < 30:
            return False
        past = vals[-(p.plateau_patience + 1)]
        return past - vals[-1] < p.plateau_min_improve * abs(past)

    def grow_discriminator(self):
        if self.phase != 1:
            raise StateError("discriminator grows after phase 1")
        if self.d.grown:
            raise StateError("discriminator already grown")
        grow_discriminator_net(self.d, rng=self.grow_rng,
                               increment=self.plan.alpha_increment)
        adam_extend(self.adam_d, self.d)

    def grow_generator(self):
        if self.phase != 2:
            raise StateError("generator grows after phase 2")
        if self.g.grown:
            raise StateError("generator already grown")
        grow_generator_net(self.g, rng=self.grow_rng,
                           increment=self.plan.alpha_increment)
        adam_extend(self.adam_g, self.g)

    def run_full_schedule(self):
        try:
            self.run_phase(1)
            self.grow_discriminator()
            self.run_phase(2)
            self.grow_generator()
            self.run_phase(3)
            self.run_phase(4)
        except NumericError:
            self._checkpoint("abort.ckpt")
            raise
        self._checkpoint("final.ckpt")
        return self

    # ---- bookkeeping -----------------------------------------------------

    def _log(self, record: dict):
        self.log_records.append(record)
        if self._log_path:
            with open(self._log_path, "a") as f:
                f.write(json.dumps(record) + "\n")

    def _checkpoint(self, name: str):
        if not self.out_dir:
            return
        meta = {
            "phase": self.phase,
            "resolution": self.current_resolution(),
            "plan": {**asdict(self.plan),
                     "phase_epochs": list(self.plan.phase_epochs)},
        }
        save_checkpoint(os.path.join(self.out_dir, name), self.g, self.d,
                        self.adam_g, self.adam_d, meta)

    def gradient_audit(self) -> dict[str, float]:
        """Max-abs gradient per parameter from one non-updating D+G pass."""
        batch = self.data.train_idx[:self.plan.batch_size]
        if self.g.grown:
            x, y = self.data.labels_hi[batch], self.data.y_hi[batch]
        else:
            x, y = self.data.labels_lo[batch], self.data.y_lo[batch]
        zero_grads(self.g)
        zero_grads(self.d)
        fake = self.g.forward(x)
        d_real = self.d.forward(x, y)
        self.d.backward(_dgrid_real_grad(d_real))
        d_fake = self.d.forward(x, fake)
        self.d.backward(_dgrid_fake_grad_for_d(d_fake))
        g_img = self.d.backward(
            _dgrid_fake_grad_for_g(self.d.forward(x, fake),
                                   self.opts.saturating))
        g_img = g_img + (-np.sign(y - fake) * (self.opts.lam / fake.size))
        self.g.backward(g_img.astype(np.float32))
        audit = {("g." + k): float(np.abs(v).max())
                 for k, v in named_grads(self.g)}
        audit.update({("d." + k): float(np.abs(v).max())
                      for k, v in named_grads(self.d)})
        zero_grads(self.g)
        zero_grads(self.d)
        return audit


def run_full_schedule(plan: PhasePlan, manifest: Manifest, data_dir,
                      out_dir=None, use_sketch: bool = True,
                      gen_cfg: GeneratorConfig | None = None,
                      disc_cfg: DiscriminatorConfig | None = None,
                      canny_params: CannyParams | None = None) -> Trainer:
    data = prepare_training_data(manifest, data_dir, canny_params,
                                 base_resolution=plan.base_resolution,
                                 use_sketch=use_sketch)
    trainer = Trainer(data, plan, gen_cfg, disc_cfg, out_dir=out_dir)
    return trainer.run_full_schedule()
