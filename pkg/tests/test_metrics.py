"""Tests for PSNR and SSIM."""

import numpy as np
import pytest

from src.core.exceptions import ImageTooSmallError, ShapeMismatchError
from src.metrics.quality import (
    PSNR_SENTINEL,
    SSIM_C1,
    SSIM_C2,
    evaluate_pair,
    gaussian_window,
    mean_row,
    psnr,
    ssim,
    ssim_with_grad,
)


def brute_force_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Sliding-window SSIM, one window at a time."""
    window = gaussian_window()
    k = window.shape[0]
    values = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        for i in range(x.shape[0] - k + 1):
            for j in range(x.shape[1] - k + 1):
                px, py = x[i : i + k, j : j + k], y[i : i + k, j : j + k]
                mx, my = (window * px).sum(), (window * py).sum()
                vx = (window * px * px).sum() - mx * mx
                vy = (window * py * py).sum() - my * my
                cxy = (window * px * py).sum() - mx * my
                values.append(
                    ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
                )
    return float(np.mean(values))


class TestPsnr:
    """Tests for psnr."""

    def test_identical_is_sentinel(self, rng):
        """Test that identical images return the 99 dB sentinel."""
        a = rng.uniform(size=(16, 16, 3))
        assert psnr(a, a) == PSNR_SENTINEL

    def test_uniform_offset(self):
        """Test that a uniform 0.1 difference gives 20 dB."""
        a = np.full((8, 8, 3), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_symmetric(self, rng):
        """Test that psnr does not depend on argument order."""
        a, b = rng.uniform(size=(2, 16, 16, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_decreases_with_noise(self, rng):
        """Test that more noise always means lower psnr."""
        a = rng.uniform(0.2, 0.8, size=(16, 16, 3))
        noise = rng.uniform(-1.0, 1.0, size=a.shape)
        values = [psnr(a, a + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        """Test that mismatched shapes are rejected."""
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    """Tests for ssim."""

    def test_identical_is_one(self, rng):
        """Test that ssim(a, a) is 1."""
        a = rng.uniform(size=(20, 24, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_is_lower(self, rng):
        """Test that an image and its negative are dissimilar."""
        a = rng.uniform(size=(16, 16, 3))
        assert ssim(a, 1.0 - a) < 1.0

    def test_symmetric(self, rng):
        """Test that ssim does not depend on argument order."""
        a, b = rng.uniform(size=(2, 16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_matches_sliding_window(self, rng):
        """Test against a direct per-window computation on a 32x32 pair."""
        a = rng.uniform(size=(32, 32, 3))
        b = np.clip(a + rng.normal(0.0, 0.1, size=a.shape), 0.0, 1.0)
        assert ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-7)

    def test_too_small(self):
        """Test that images smaller than the window are rejected."""
        with pytest.raises(ImageTooSmallError):
            ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))

    def test_gradient_matches_finite_differences(self, rng):
        """Test the analytic SSIM gradient at a few pixels."""
        x = rng.uniform(size=(14, 15, 3))
        y = rng.uniform(size=(14, 15, 3))
        value, grad = ssim_with_grad(x, y)
        assert value == pytest.approx(ssim(x, y), abs=1e-14)
        h = 1e-6
        for idx in [(0, 0, 0), (6, 7, 1), (13, 14, 2), (3, 11, 0)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            numeric = (ssim(xp, y) - ssim(xm, y)) / (2 * h)
            assert grad[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


class TestRows:
    """Tests for metric rows."""

    def test_evaluate_pair_and_mean(self, rng):
        """Test that rows carry both metrics and average correctly."""
        gt = rng.uniform(size=(16, 16, 3))
        rows = [evaluate_pair("0", gt, gt), evaluate_pair("1", np.clip(gt + 0.1, 0, 1), gt)]
        assert rows[0].psnr == PSNR_SENTINEL
        assert rows[0].ssim == pytest.approx(1.0)
        mean = mean_row(rows)
        assert mean.view_id == "mean"
        assert mean.psnr == pytest.approx((rows[0].psnr + rows[1].psnr) / 2)
        assert rows[1].to_dict()["view_id"] == "1"
