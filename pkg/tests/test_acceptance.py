"""End-to-end acceptance checks.

Each test here states one externally checkable property of the package:
gradient correctness, oracle agreement for the edge detector and metrics,
progressive-growth invariants, a complete desk-scale training run with
quality floors, the sketch-ablation trend, determinism, and service
latency.  The two training runs (full labels and mask-only labels) are
module-scoped fixtures shared by several tests.
"""

import io
import json
import os
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

import test_nn_gradients as tng
from oracles import naive_canny
from pgsgan.checkpoint import (grow_discriminator_net, grow_generator_net,
                               load_checkpoint)
from pgsgan.config import load_run_config
from pgsgan.fib import FibState, alpha_update
from pgsgan.metrics import FeatureExtractor, fid, kid, mask_fidelity, ms_ssim
from pgsgan.nn.layers import downsample2x, upsample2x
from pgsgan.phantom import PhantomConfig, generate_dataset
from pgsgan.service import ModelHandle, create_app
from pgsgan.sgan import (Discriminator, DiscriminatorConfig, Generator,
                         GeneratorConfig, compute_losses, patch_grid_size)
from pgsgan.sketch import canny
from pgsgan.trainer import PhasePlan, run_full_schedule
from pgsgan.nn.adam import adam_init


# ---- expensive shared fixtures ------------------------------------------

@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    cfg = load_run_config()
    data_dir = tmp_path_factory.mktemp("desk_data")
    manifest = generate_dataset(cfg.phantom, data_dir)
    return cfg, manifest, data_dir


@pytest.fixture(scope="module")
def desk_run(desk_dataset, tmp_path_factory):
    """Full four-phase 32->64 run on 256 phantoms with default settings."""
    cfg, manifest, data_dir = desk_dataset
    out = tmp_path_factory.mktemp("desk_run")
    plan = PhasePlan(**{f: getattr(cfg.train, f)
                        for f in PhasePlan.__dataclass_fields__})
    start = time.perf_counter()
    trainer = run_full_schedule(plan, manifest, data_dir, out_dir=out,
                                use_sketch=True, gen_cfg=cfg.generator,
                                disc_cfg=cfg.discriminator,
                                canny_params=cfg.canny)
    elapsed = time.perf_counter() - start
    return trainer, elapsed, out


@pytest.fixture(scope="module")
def ablation_run(desk_dataset, tmp_path_factory):
    """Same plan, seed and split, but with the sketch channel zeroed."""
    cfg, manifest, data_dir = desk_dataset
    out = tmp_path_factory.mktemp("ablation_run")
    plan = PhasePlan(**{f: getattr(cfg.train, f)
                        for f in PhasePlan.__dataclass_fields__})
    return run_full_schedule(plan, manifest, data_dir, out_dir=out,
                             use_sketch=False, gen_cfg=cfg.generator,
                             disc_cfg=cfg.discriminator,
                             canny_params=cfg.canny)


# ---- 1: gradient suite ---------------------------------------------------

def _loss_grad_check(fn, x, analytic, h=1e-3, tol=1e-3):
    fd = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        fd[i] = (fp - fm) / (2 * h)
    a = analytic.ravel().astype(np.float64)
    err = np.linalg.norm(fd - a) / max(np.linalg.norm(fd), np.linalg.norm(a))
    assert err <= tol, f"loss gradient error {err:.2e}"


def test_gradient_suite_all_layers_and_losses_under_60s():
    start = time.perf_counter()
    for name in tng.NAMES:
        tng.test_gradients_float32(name)

    from pgsgan.sgan import (_dgrid_fake_grad_for_d, _dgrid_fake_grad_for_g,
                             _dgrid_real_grad)
    # float64 inputs: the check targets the analytic gradient formulas,
    # and float32 mean-reduction noise at lam=100 would drown the quotient
    rng = np.random.default_rng(77)
    d_real = rng.uniform(0.1, 0.9, (2, 1, 3, 3))
    d_fake = rng.uniform(0.1, 0.9, (2, 1, 3, 3))
    y = rng.uniform(-1, 1, (2, 1, 8, 8))
    g_x = rng.uniform(-1, 1, (2, 1, 8, 8))
    lam = 100.0

    d_loss = lambda: compute_losses(d_real, d_fake, y, g_x, lam).d_loss
    g_total = lambda: compute_losses(d_real, d_fake, y, g_x, lam).g_total
    _loss_grad_check(d_loss, d_real, _dgrid_real_grad(d_real))
    _loss_grad_check(d_loss, d_fake, _dgrid_fake_grad_for_d(d_fake))
    _loss_grad_check(g_total, d_fake, _dgrid_fake_grad_for_g(d_fake, False))
    # L1 part of the generator objective, via its image argument
    l1_grad = lam * np.sign(g_x - y) / g_x.size
    _loss_grad_check(g_total, g_x, l1_grad)

    elapsed = time.perf_counter() - start
    assert elapsed <= 60.0, f"gradient suite took {elapsed:.1f}s"


# ---- 2: edge-detector oracle ---------------------------------------------

def test_canny_matches_naive_reference_on_100_images():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        img = rng.random((16, 16))
        assert np.array_equal(canny(img), naive_canny(img))


# ---- 3: patch-grid shapes ------------------------------------------------

def test_patch_grid_shapes():
    full = DiscriminatorConfig(hidden=((64, 2), (128, 2), (256, 2), (512, 1)))
    assert patch_grid_size(full, 256) == 30
    assert patch_grid_size(DiscriminatorConfig(), 32) == 6


# ---- 4: growth function-preservation ------------------------------------

def _fresh_nets(seed):
    rng = np.random.default_rng(seed)
    g = Generator(GeneratorConfig(base_width=8, n_residual_blocks=1), rng=rng)
    d = Discriminator(DiscriminatorConfig(hidden=((8, 2), (16, 1))), rng=rng)
    return g, d


def test_growth_preserves_function_at_alpha_zero():
    rng = np.random.default_rng(11)
    x64 = rng.random((2, 3, 64, 64)).astype(np.float32)
    y64 = rng.uniform(-1, 1, (2, 1, 64, 64)).astype(np.float32)

    g_old, d_old = _fresh_nets(9)
    g_new, d_new = _fresh_nets(9)
    grow_discriminator_net(d_new, rng=np.random.default_rng(1))
    before = d_old.forward(downsample2x(x64), downsample2x(y64))
    after = d_new.forward(x64, y64)
    assert np.max(np.abs(after - before)) <= 1e-6

    grow_generator_net(g_new, rng=np.random.default_rng(2))
    before = upsample2x(g_old.forward(downsample2x(x64)))
    after = g_new.forward(x64)
    assert np.max(np.abs(after - before)) <= 1e-6


# ---- 5: fade-in schedule milestones -------------------------------------

def test_alpha_schedule_milestones():
    _, d = _fresh_nets(3)
    grow_discriminator_net(d, rng=np.random.default_rng(0))
    for _ in range(30):
        alpha_update(d.in_fib.state)
    assert d.in_fib.state.alpha == 1.0

    g, _ = _fresh_nets(3)
    grow_generator_net(g, rng=np.random.default_rng(0))
    for state in (g.in_fib.state, g.out_fib.state):
        for i in range(15):
            alpha_update(state)
        assert state.alpha == 0.5
        for _ in range(40):
            alpha_update(state)
            assert state.alpha <= 0.5
        assert state.alpha == 0.5


# ---- 6: metric oracles ---------------------------------------------------

def test_metric_oracles():
    rng = np.random.default_rng(606)
    img = rng.random((1, 64, 64)).astype(np.float32)
    assert abs(ms_ssim(img, img) - 1.0) <= 1e-6

    feats = rng.standard_normal((200, 64))
    assert fid(feats, feats.copy()) <= 1e-6

    # mean-shifted Gaussians with a shared covariance sample: the Frechet
    # distance reduces to the squared mean distance
    n, d = 5000, 64
    for m2 in (1.0, 4.0, 9.0):
        mu = np.zeros(d)
        mu[0] = np.sqrt(m2)
        a = rng.standard_normal((n, d))
        b = a + mu
        got = fid(a, b)
        assert abs(got - m2) <= 0.05 * m2, f"fid {got} vs {m2}"

    reps = [kid(rng.standard_normal((100, 8)), rng.standard_normal((100, 8)))
            for _ in range(20)]
    se = np.std(reps, ddof=1) / np.sqrt(len(reps))
    assert abs(np.mean(reps)) <= 2 * se


# ---- 7: end-to-end desk run ----------------------------------------------

class TestDeskRun:
    def test_wall_time_under_60_minutes(self, desk_run):
        _, elapsed, _ = desk_run
        assert elapsed <= 3600.0, f"training took {elapsed / 60:.1f} min"

    def test_beats_constant_mean_baseline_by_20_percent(self, desk_run):
        trainer, _, _ = desk_run
        data = trainer.data
        mean_img = data.y_hi[data.train_idx].mean(axis=0)
        baseline = float(np.abs(data.y_hi[data.test_idx] - mean_img).mean())
        gen = trainer.validation_l1()
        assert gen <= 0.8 * baseline, f"gen L1 {gen:.4f} vs baseline {baseline:.4f}"

    def test_fid_beats_shuffled_pixel_real(self, desk_run):
        trainer, _, _ = desk_run
        data = trainer.data
        real = data.images_hi[data.test_idx]
        synth = trainer.synthesize_test(len(data.test_idx))
        rng = np.random.default_rng(70)
        shuffled = np.stack([
            rng.permuted(im.ravel()).reshape(im.shape) for im in real])
        fx = FeatureExtractor(seed=42)
        real_f = fx(real)
        fid_synth = fid(real_f, fx(synth))
        fid_shuffled = fid(real_f, fx(shuffled))
        assert fid_synth < fid_shuffled, (
            f"synth {fid_synth:.3f} >= shuffled {fid_shuffled:.3f}")

    def test_mask_fidelity_floor(self, desk_run):
        trainer, _, _ = desk_run
        data = trainer.data
        synth = trainer.synthesize_test(len(data.test_idx))
        dices = [mask_fidelity(synth[i], data.labels_hi[j])
                 for i, j in enumerate(data.test_idx)]
        mean_dice = float(np.mean(dices))
        assert mean_dice >= 0.6, f"mean dice {mean_dice:.3f}"


# ---- 8: sketch ablation trend --------------------------------------------

def test_sketch_ablation_does_not_beat_composite(desk_run, ablation_run):
    trainer, _, _ = desk_run
    data = trainer.data
    real = data.images_hi[data.test_idx]
    fx = FeatureExtractor(seed=42)
    real_f = fx(real)
    fid_full = fid(real_f, fx(trainer.synthesize_test(len(data.test_idx))))
    n_abl = len(ablation_run.data.test_idx)
    fid_abl = fid(fx(ablation_run.data.images_hi[ablation_run.data.test_idx]),
                  fx(ablation_run.synthesize_test(n_abl)))
    assert fid_abl >= fid_full, f"ablation {fid_abl:.3f} < full {fid_full:.3f}"


# ---- 9: determinism & persistence ----------------------------------------

def _short_run(tmp_path, tag):
    cfg = PhantomConfig(image_size=64, n_samples=12, seed=5)
    data_dir = tmp_path / f"data_{tag}"
    manifest = generate_dataset(cfg, data_dir)
    plan = PhasePlan(phase_epochs=(1, 1, 1, 1), plateau=False, quick_fid_n=0,
                     seed=21)
    out = tmp_path / f"run_{tag}"
    gen = GeneratorConfig(base_width=8, n_residual_blocks=1)
    disc = DiscriminatorConfig(hidden=((8, 2), (16, 1)))
    return run_full_schedule(plan, manifest, data_dir, out_dir=out,
                             gen_cfg=gen, disc_cfg=disc)


def _comparable(record):
    """Loss record minus wall-clock noise, with NaN made comparable."""
    out = {}
    for k, v in record.items():
        if k == "wall_seconds":
            continue
        if isinstance(v, float) and np.isnan(v):
            v = "nan"
        out[k] = v
    return out


def test_determinism_and_persistence(tmp_path):
    a = _short_run(tmp_path, "a")
    b = _short_run(tmp_path, "b")
    first_a = [r for r in a.log_records if r.get("epoch") == 1][0]
    first_b = [r for r in b.log_records if r.get("epoch") == 1][0]
    assert _comparable(first_a) == _comparable(first_b)
    assert ([_comparable(r) for r in a.log_records]
            == [_comparable(r) for r in b.log_records])

    g, *_ , meta = load_checkpoint(os.path.join(a.out_dir, "final.ckpt"))
    labels = a.data.labels_hi[a.data.test_idx[:4]]
    direct = a.g.forward(labels)
    reloaded = g.forward(labels)
    np.testing.assert_array_equal(direct, reloaded)


def test_service_byte_identical_responses(desk_run):
    _, _, out = desk_run
    client = TestClient(create_app(ModelHandle(os.path.join(out, "final.ckpt"))))
    body = _label_png_from(desk_run)
    r1 = client.post("/synthesize", content=body)
    r2 = client.post("/synthesize", content=body)
    assert r1.status_code == 200
    assert r1.content == r2.content


# ---- 10: service latency -------------------------------------------------

def _label_png_from(desk_run):
    trainer, _, _ = desk_run
    label = trainer.data.labels_hi[trainer.data.test_idx[0]]
    arr = (np.transpose(label, (1, 2, 0)) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def test_synthesize_latency_under_2s(desk_run):
    _, _, out = desk_run
    client = TestClient(create_app(ModelHandle(os.path.join(out, "final.ckpt"))))
    body = _label_png_from(desk_run)
    start = time.perf_counter()
    r = client.post("/synthesize", content=body)
    elapsed = time.perf_counter() - start
    assert r.status_code == 200
    assert elapsed <= 2.0, f"synthesis took {elapsed:.2f}s"
    assert int(r.headers["x-synth-millis"]) <= 2000
