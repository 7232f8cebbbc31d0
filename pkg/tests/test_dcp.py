"""Tests for dark-channel detection and reliability pruning."""

import numpy as np
import pytest

from src.calib.dcp import (
    DcpReport,
    accumulate,
    analyze_image,
    calibrate_thresholds,
    dark_channel,
    dark_channel_residual,
    local_average,
    prune,
    prune_candidates,
)
from src.config import CalibConfig
from src.core.exceptions import ScheduleError, ShapeMismatchError, WindowSizeError
from src.training.state import TrainState
from tests.helpers import isotropic_gaussians


def brute_force_average(values: np.ndarray, window: int) -> np.ndarray:
    r = window // 2
    padded = np.pad(values, r, mode="edge")
    out = np.empty_like(values)
    for y in range(values.shape[0]):
        for x in range(values.shape[1]):
            out[y, x] = padded[y : y + window, x : x + window].mean()
    return out


def saturated_surface(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Bright image whose per-pixel channel minimum never exceeds 0.04."""
    image = rng.uniform(0.3, 1.0, size=(size, size, 3))
    dark = rng.integers(0, 3, size=(size, size))
    rows, cols = np.indices((size, size))
    image[rows, cols, dark] = rng.uniform(0.0, 0.04, size=(size, size))
    return image


def report_with_ratio(ratio: float) -> DcpReport:
    zeros = np.zeros((4, 4))
    return DcpReport(dark=zeros, dark_smoothed=zeros, bad_mask=zeros.astype(bool), violation_ratio=ratio)


def prune_state(opacities, iteration: int, config: CalibConfig) -> TrainState:
    n = len(opacities)
    g = isotropic_gaussians([[0.1 * i, 0.0, 0.0] for i in range(n)], 0.05, np.array(opacities), 0.5)
    state = TrainState.create(g, config)
    state.iteration = iteration
    return state


PRUNE_CONFIG = CalibConfig(t_start=5, t_prune=5, total_iters=100)


class TestImageStatistics:
    """Tests for the dark channel and its local average."""

    def test_dark_channel_is_channel_minimum(self, rng):
        """Test the per-pixel minimum with no spatial erosion."""
        image = rng.uniform(size=(8, 8, 3))
        np.testing.assert_array_equal(dark_channel(image), image.min(axis=2))

    def test_residual_of_veiled_surface(self, rng):
        """Test that a veil of A over transmittance t raises the dark channel by about A (1 - t)."""
        surface = saturated_surface(rng)
        veiled = surface * 0.6 + 0.8 * 0.4
        residual = dark_channel_residual(veiled, surface)
        np.testing.assert_allclose(residual, dark_channel(veiled) - dark_channel(surface))
        assert np.all(residual > 0.8 * 0.4 - 0.04)
        np.testing.assert_array_equal(dark_channel_residual(surface, surface), 0.0)

    def test_residual_shape_mismatch(self):
        """Test that images of different shapes are rejected."""
        with pytest.raises(ShapeMismatchError):
            dark_channel_residual(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))

    def test_local_average_matches_padded_loop(self, rng):
        """Test the box filter against an edge-padded brute-force mean."""
        values = rng.uniform(size=(20, 17))
        for window in (1, 3, 7, 15):
            np.testing.assert_allclose(local_average(values, window), brute_force_average(values, window), atol=1e-12)

    @pytest.mark.parametrize("window", [0, 4, -3, 33])
    def test_bad_window(self, window):
        """Test that even, non-positive and oversize windows are rejected."""
        with pytest.raises(WindowSizeError):
            local_average(np.zeros((32, 32)), window)

    def test_veil_raises_violation_ratio(self, rng):
        """Test composites of a saturated surface under an A = 0.8 veil."""
        surface = saturated_surface(rng)
        ratios = []
        for t in (1.0, 0.8, 0.6, 0.4, 0.2):
            composite = surface * t + 0.8 * (1.0 - t)
            ratios.append(analyze_image(composite, tau1=0.10, tau2=0.05, window=15).violation_ratio)
        assert ratios[0] == 0.0
        assert all(r >= 0.95 for r in ratios[1:])
        assert all(a <= b for a, b in zip(ratios, ratios[1:]))

    def test_report_fields(self, rng):
        """Test that the mask and ratio agree."""
        report = analyze_image(rng.uniform(size=(32, 32, 3)))
        assert report.violation_ratio == pytest.approx(report.bad_mask.mean())
        assert report.to_dict()["bad_pixels"] == int(report.bad_mask.sum())

    def test_calibrate_constant_images(self):
        """Test that percentiles of a constant dark channel are the constant."""
        images = [np.full((32, 32, 3), 0.2), np.full((32, 32, 3), 0.2)]
        tau1, tau2 = calibrate_thresholds(images, percentile=95.0)
        assert tau1 == pytest.approx(0.2)
        assert tau2 == pytest.approx(0.2)

    def test_calibrate_needs_images(self):
        """Test that an empty image list is rejected."""
        with pytest.raises(ValueError):
            calibrate_thresholds([])


class TestAccumulate:
    """Tests for score accumulation."""

    def test_before_warm_up(self):
        """Test that accumulation before t_start is a schedule error."""
        state = prune_state([0.5, 0.5], iteration=4, config=PRUNE_CONFIG)
        with pytest.raises(ScheduleError):
            accumulate(state, report_with_ratio(0.3), np.array([0]), PRUNE_CONFIG)

    def test_replay(self, rng):
        """Test that scores equal the sum of ratios over the views each Gaussian was visible in."""
        state = prune_state([0.5] * 6, iteration=5, config=PRUNE_CONFIG)
        expected = np.zeros(6)
        for _ in range(12):
            ratio = float(rng.uniform())
            visible = np.flatnonzero(rng.random(6) < 0.5)
            accumulate(state, report_with_ratio(ratio), visible, PRUNE_CONFIG)
            expected[visible] += ratio
            state.iteration += 1
        np.testing.assert_allclose(state.gaussians.dcp_scores, expected, atol=1e-12)


class TestPrune:
    """Tests for the periodic pruning event."""

    def test_candidates_are_strict(self):
        """Test that a score equal to the threshold is not a candidate."""
        mask = prune_candidates(np.array([2.5, 2.6, 3.0]), np.array([0.01, 0.01, 0.2]), 2.5, 0.05)
        assert mask.tolist() == [False, True, False]

    def test_low_opacity_floaters_removed(self):
        """Test five views of ratio 0.6 prune only the transparent Gaussians at iteration 10."""
        state = prune_state([0.9, 0.02, 0.9, 0.02, 0.9, 0.02], iteration=5, config=PRUNE_CONFIG)
        for it in range(5, 10):
            state.iteration = it
            accumulate(state, report_with_ratio(0.6), np.arange(6), PRUNE_CONFIG)
        state.iteration = 10
        decision = prune(state, PRUNE_CONFIG)

        assert decision.threshold_lambda == pytest.approx(2.5)
        assert decision.pruned_indices == [1, 3, 5]
        assert decision.pruned_lineage == [1, 3, 5]
        assert len(state) == 3
        assert len(state.optimizer) == 3
        assert np.all(state.gaussians.opacities > 0.5)
        assert state.lineage.tolist() == [0, 2, 4]
        assert decision.reset_applied
        assert np.all(state.gaussians.dcp_scores == 0.0)

        event = state.events[-1]
        assert event["kind"] == "prune"
        assert event["iteration"] == 10
        assert event["count"] == 3
        assert event["threshold_lambda"] == pytest.approx(2.5)
        assert state.reconcile()

    def test_off_schedule(self):
        """Test that pruning off the t_prune grid or before t_start raises."""
        for it in (0, 12):
            state = prune_state([0.5, 0.5], iteration=it, config=PRUNE_CONFIG)
            with pytest.raises(ScheduleError):
                prune(state, PRUNE_CONFIG)

    def test_never_empties_the_set(self):
        """Test that pruning every Gaussian is skipped."""
        state = prune_state([0.02, 0.02, 0.02], iteration=10, config=PRUNE_CONFIG)
        state.gaussians.dcp_scores[:] = 10.0
        decision = prune(state, PRUNE_CONFIG)
        assert decision.skipped_empty
        assert decision.pruned_indices == []
        assert len(state) == 3
        assert state.events[-1]["count"] == 0

    def test_scores_kept_without_reset(self):
        """Test that survivor scores persist when resetting is disabled."""
        config = CalibConfig(t_start=5, t_prune=5, total_iters=100, dcp_reset_scores=False)
        state = prune_state([0.9, 0.02], iteration=10, config=config)
        state.gaussians.dcp_scores[:] = [1.0, 3.0]
        decision = prune(state, config)
        assert decision.pruned_indices == [1]
        assert not decision.reset_applied
        assert state.gaussians.dcp_scores.tolist() == [1.0]
