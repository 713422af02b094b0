"""Metric fixtures and the windowed SSIM oracle."""

import numpy as np
import pytest

from virtstain.color import luminance
from virtstain.errors import DomainError, RangeError, ShapeError
from virtstain.metrics import (
    aggregate_reports,
    evaluate_wsi,
    mse_foreground,
    psnr,
    ssim,
)
from virtstain.wsi import WsiImage


def ssim_oracle(p, t):
    """Direct windowed-formula computation with scalar loops."""
    sigma, k1, k2 = 1.5, 0.01, 0.03
    g1 = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * sigma * sigma))
    g1 /= g1.sum()
    w = np.outer(g1, g1)
    c1, c2 = k1 * k1, k2 * k2
    h, wd = p.shape
    vals = []
    for i in range(h - 10):
        for j in range(wd - 10):
            a = p[i : i + 11, j : j + 11]
            b = t[i : i + 11, j : j + 11]
            mu1 = float((w * a).sum())
            mu2 = float((w * b).sum())
            v1 = float((w * a * a).sum()) - mu1 * mu1
            v2 = float((w * b * b).sum()) - mu2 * mu2
            cov = float((w * a * b).sum()) - mu1 * mu2
            vals.append(
                ((2 * mu1 * mu2 + c1) * (2 * cov + c2))
                / ((mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2))
            )
    return float(np.mean(vals)) * 100.0


class TestMse:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(16, 16, 3))
        assert mse_foreground(x, x, np.ones((16, 16))) == 0.0

    def test_constant_offset(self):
        t = np.full((16, 16, 3), 0.25)
        assert mse_foreground(t + 0.1, t, np.ones((16, 16))) == pytest.approx(0.01, rel=1e-12)

    def test_half_plane_foreground_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(size=(16, 16, 3))
        t = rng.uniform(size=(16, 16, 3))
        fg = np.zeros((16, 16))
        fg[:, 8:] = 1.0
        acc, n = 0.0, 0
        for y in range(16):
            for x in range(8, 16):
                for c in range(3):
                    acc += (p[y, x, c] - t[y, x, c]) ** 2
                    n += 1
        assert mse_foreground(p, t, fg) == pytest.approx(acc / n, rel=1e-12)

    def test_background_changes_never_matter(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(size=(12, 12, 3))
        t = rng.uniform(size=(12, 12, 3))
        fg = np.zeros((12, 12))
        fg[3:9, 3:9] = 1.0
        base = mse_foreground(p, t, fg)
        p2 = p.copy()
        p2[0, 0] = 9.0  # background-only edit
        assert mse_foreground(p2, t, fg) == base

    def test_empty_foreground_and_shape_mismatch(self):
        x = np.zeros((8, 8, 3))
        with pytest.raises(DomainError):
            mse_foreground(x, x, np.zeros((8, 8)))
        with pytest.raises(ShapeError):
            mse_foreground(x, np.zeros((8, 9, 3)), np.ones((8, 8)))


class TestPsnr:
    def test_fixture_values(self):
        assert psnr(0.01) == pytest.approx(20.0, abs=1e-12)
        assert psnr(1.0) == pytest.approx(0.0, abs=1e-12)
        assert psnr(0.0) == 100.0
        assert psnr(9.9e-11) == 100.0

    def test_strictly_decreasing_below_cap(self):
        vals = [psnr(m) for m in np.logspace(-9, 0, 40)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_negative_rejected(self):
        with pytest.raises(RangeError):
            psnr(-1e-9)


class TestSsim:
    def test_identical_is_hundred(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(16, 16))
        assert ssim(x, x) == pytest.approx(100.0, abs=1e-9)

    def test_constant_pair_is_hundred(self):
        a = np.full((12, 12), 0.4)
        assert ssim(a, a.copy()) == pytest.approx(100.0)

    def test_inverted_high_variance_fixture_is_strongly_negative(self):
        yy, xx = np.mgrid[0:16, 0:16]
        t = ((yy + xx) % 2).astype(float)  # checkerboard
        val = ssim(1.0 - t, t)
        assert val < -50.0
        assert val == pytest.approx(ssim_oracle(1.0 - t, t), abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_windowed_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=(14, 17))
        t = np.clip(p + rng.normal(0, 0.1, p.shape), 0, 1)
        assert ssim(p, t) == pytest.approx(ssim_oracle(p, t), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        p = rng.uniform(size=(13, 13))
        t = rng.uniform(size=(13, 13))
        assert ssim(p, t) == pytest.approx(ssim(t, p), abs=1e-12)

    def test_rgb_input_uses_luminance(self):
        rng = np.random.default_rng(12)
        p = rng.uniform(size=(12, 12, 3))
        t = rng.uniform(size=(12, 12, 3))
        assert ssim(p, t) == pytest.approx(ssim(luminance(p), luminance(t)))

    def test_too_small_raster(self):
        with pytest.raises(DomainError):
            ssim(np.zeros((10, 12)), np.zeros((10, 12)))


def tissue_slide(seed=0, h=64, w=64):
    # saturated colors everywhere so the whole slide is tissue
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, size=(h, w, 3))
    base[..., 0] = np.clip(base[..., 0] + 0.2, 0, 1)  # keep saturation up
    return WsiImage.from_level0(base)


class TestEvaluateWsi:
    def test_identical_slides_hit_all_three_fixtures(self):
        he = tissue_slide(1)
        pred = tissue_slide(2)
        report = evaluate_wsi(pred, pred, he)
        assert report.mse_raw == 0.0
        assert report.psnr_db == 100.0
        assert report.ssim_percent == pytest.approx(100.0, abs=1e-9)

    def test_offset_slides(self):
        he = tissue_slide(3)
        truth = np.full((64, 64, 3), 0.45)
        report = evaluate_wsi(truth + 0.1, truth, he)
        assert report.mse_raw == pytest.approx(0.01, rel=1e-12)
        assert report.psnr_db == pytest.approx(20.0, abs=1e-9)

    def test_misaligned_slides_rejected(self):
        he = tissue_slide(4)
        with pytest.raises(ShapeError):
            evaluate_wsi(np.zeros((32, 64, 3)), np.zeros((64, 64, 3)), he)

    def test_aggregate_mean_and_std(self):
        he = tissue_slide(5)
        truth = np.full((64, 64, 3), 0.4)
        r1 = evaluate_wsi(truth + 0.1, truth, he)
        r2 = evaluate_wsi(truth + 0.2, truth, he)
        agg = aggregate_reports([r1, r2])
        assert agg["slides"] == 2
        assert agg["mse_raw"]["mean"] == pytest.approx((r1.mse_raw + r2.mse_raw) / 2)
        assert agg["psnr_db"]["std"] > 0.0
