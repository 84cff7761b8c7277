"""Metric mathematics: FID against the analytic Gaussian law, KID
unbiasedness, MS-SSIM against a per-window oracle, and the mask-fidelity
proxy on phantom data."""

import numpy as np
import pytest

from oracles import naive_ssim
from pgsgan.errors import DataError, SizeError
from pgsgan.metrics import (FeatureExtractor, evaluate_synthesis, fid, kid,
                            mask_fidelity, ms_ssim)
from pgsgan.phantom import PhantomConfig, generate_phantom
from pgsgan.sketch import CannyParams, canny, compose_label


class TestFeatureExtractor:
    def test_deterministic_64_dim(self):
        imgs = np.random.default_rng(0).random((3, 1, 32, 32))
        a = FeatureExtractor()(imgs)
        b = FeatureExtractor()(imgs)
        assert a.shape == (3, 64)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_features(self):
        imgs = np.random.default_rng(1).random((2, 1, 32, 32))
        assert not np.array_equal(FeatureExtractor(seed=42)(imgs),
                                  FeatureExtractor(seed=43)(imgs))


class TestFid:
    def test_identical_sets_nearly_zero(self):
        f = np.random.default_rng(2).standard_normal((100, 64))
        assert fid(f, f.copy()) <= 1e-6

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((80, 64))
        b = rng.standard_normal((80, 64)) * 1.5 + 0.3
        assert abs(fid(a, b) - fid(b, a)) <= 1e-9
        assert fid(a, b) >= 0.0

    @pytest.mark.parametrize("norm_sq", [1.0, 4.0, 9.0])
    def test_gaussian_mean_shift_law(self, norm_sq):
        # Coupled draws (b = a + mu is a valid N(mu, I) sample) keep the
        # sample covariances equal, isolating the analytic law fid=|mu|^2.
        # Independent draws would add a Wishart trace bias of roughly
        # d(d+1)/(2n) ~ 0.4, larger than 5% of the small shifts.
        rng = np.random.default_rng(int(norm_sq))
        mu = rng.standard_normal(64)
        mu *= np.sqrt(norm_sq) / np.linalg.norm(mu)
        a = rng.standard_normal((5000, 64))
        b = a + mu
        assert abs(fid(a, b) - norm_sq) <= 0.05 * norm_sq

    def test_too_few_samples_raises(self):
        f = np.zeros((5, 64))
        with pytest.raises(DataError):
            fid(f[:1], f)
        with pytest.raises(DataError):
            fid(f, f[:1])


class TestKid:
    def test_unbiased_near_zero_on_same_distribution(self):
        rng = np.random.default_rng(4)
        vals = []
        for _ in range(20):
            a = rng.standard_normal((50, 64))
            b = rng.standard_normal((50, 64))
            vals.append(kid(a, b))
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean()) <= 2 * se + 1e-12

    def test_three_vector_hand_computation(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([[1.0, 1.0], [0.5, 0.0]])
        d = 2.0
        k = lambda a, b: (a @ b / d + 1.0) ** 3
        xx = sum(k(x[i], x[j]) for i in range(3) for j in range(3) if i != j)
        yy = sum(k(y[i], y[j]) for i in range(2) for j in range(2) if i != j)
        xy = sum(k(x[i], y[j]) for i in range(3) for j in range(2))
        expect = xx / 6.0 + yy / 2.0 - 2.0 * xy / 6.0
        assert abs(kid(x, y) - expect) <= 1e-9

    def test_separated_distributions_positive(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((60, 64))
        b = rng.standard_normal((60, 64)) + 2.0
        assert kid(a, b) > 0.1

    def test_too_few_samples_raises(self):
        f = np.zeros((5, 64))
        with pytest.raises(DataError):
            kid(f[:1], f)


def _checkerboard(size=64):
    yy, xx = np.mgrid[:size, :size]
    return ((yy + xx) % 2).astype(np.float64)


class TestMsSsim:
    def test_self_similarity_is_one(self):
        x = np.random.default_rng(6).random((64, 64))
        assert abs(ms_ssim(x, x) - 1.0) <= 1e-6

    def test_checkerboard_vs_inverse_low(self):
        cb = _checkerboard()
        assert ms_ssim(cb, 1.0 - cb) < 0.1

    def test_single_scale_matches_naive_oracle(self):
        # 16x16 images force exactly one scale, where ms_ssim reduces to
        # the plain windowed SSIM mean
        rng = np.random.default_rng(7)
        a, b = rng.random((2, 16, 16))
        assert abs(ms_ssim(a, b) - naive_ssim(a, b)) <= 1e-9

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        a, b = rng.random((2, 64, 64))
        assert abs(ms_ssim(a, b) - ms_ssim(b, a)) <= 1e-12

    def test_joint_intensity_shift_stable(self):
        rng = np.random.default_rng(9)
        a, b = rng.random((2, 64, 64)) * 0.5
        assert abs(ms_ssim(a + 0.1, b + 0.1) - ms_ssim(a, b)) < 1e-3

    def test_too_small_raises(self):
        with pytest.raises(SizeError):
            ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch_raises(self):
        with pytest.raises(SizeError):
            ms_ssim(np.zeros((32, 32)), np.zeros((32, 64)))


def _phantom_with_label(seed, config=None):
    cfg = config or PhantomConfig(image_size=64)
    s = generate_phantom(seed, cfg)
    label = compose_label(s.mask, canny(s.image, CannyParams()))
    return s, label


class TestMaskFidelity:
    def test_noise_free_base_tissue_scores_high(self):
        # The follicle should fill close to 15% of the ovary so the
        # percentile threshold can isolate it exactly; sqrt(0.15) ~ 0.39
        # axis ratio centers the area fraction on the quantile.
        cfg = PhantomConfig(image_size=64,
                            follicle_axis_range=(0.38, 0.40),
                            follicle_count_range=(1, 1))
        for seed in range(10, 20):
            s, label = _phantom_with_label(seed, cfg)
            assert mask_fidelity(s.base_tissue, label) >= 0.95

    def test_constant_image_scores_low(self):
        vals = []
        for seed in range(20):
            s, label = _phantom_with_label(100 + seed)
            vals.append(mask_fidelity(np.full_like(s.image[0], 0.5), label))
        assert np.mean(vals) < 0.5

    def test_empty_follicle_degenerate_rule(self):
        label = np.zeros((3, 64, 64), np.float32)
        label[0, 16:48, 16:48] = 1.0  # ovary without follicles
        bright = np.ones((64, 64))
        assert mask_fidelity(bright, label) in (0.0, 1.0)
        no_ovary = np.zeros((3, 64, 64), np.float32)
        assert mask_fidelity(bright, no_ovary) == 1.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(SizeError):
            mask_fidelity(np.zeros((32, 32)), np.zeros((3, 64, 64)))


class TestEvaluateSynthesis:
    def test_report_fields_and_determinism(self):
        rng = np.random.default_rng(12)
        real = rng.random((8, 1, 32, 32))
        synth = np.clip(real + rng.normal(0, 0.05, real.shape), 0, 1)
        labels = np.zeros((8, 3, 32, 32), np.float32)
        labels[:, 0, 8:24, 8:24] = 1.0
        labels[:, 1, 12:20, 12:20] = 1.0
        r1 = evaluate_synthesis(synth, real, labels)
        r2 = evaluate_synthesis(synth, real, labels)
        assert r1 == r2
        for key in ("fid", "kid_x100", "ms_ssim", "mask_fidelity_dice",
                    "n_real", "n_synth", "extractor_seed"):
            assert key in r1
        assert r1["n_real"] == 8 and r1["extractor_seed"] == 42
        assert 0.0 <= r1["ms_ssim"] <= 1.0
