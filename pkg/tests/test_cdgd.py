"""Tests for depth-guided dropout."""

import numpy as np
import pytest

from src.calib.cdgd import (
    continuous_weight,
    depth_importance,
    dropout_probability,
    global_median_depth,
    iteration_seed,
    make_plan,
    piecewise_probability,
    resolve_tau,
    sample_mask,
)
from src.config import CalibConfig, DropoutMode
from src.core.exceptions import NoVisibleGaussiansError, ThresholdOrderError
from src.render.projection import project
from tests.helpers import isotropic_gaussians

SWEEP = np.linspace(0.5, 6.0, 10_000)


class TestDepthImportance:
    """Tests for depth_importance."""

    def test_min_max_normalization(self):
        """Test nearest -> 0, farthest -> 1, linear in between."""
        np.testing.assert_allclose(depth_importance([2.0, 4.0, 3.0]), [0.0, 1.0, 0.5])

    def test_monotone_and_bounded(self, rng):
        """Test that importance preserves depth order and stays in [0, 1]."""
        depths = rng.uniform(0.1, 10.0, 200)
        imp = depth_importance(depths)
        order = np.argsort(depths)
        assert np.all(np.diff(imp[order]) >= 0)
        assert imp.min() == 0.0 and imp.max() == 1.0

    def test_equal_depths(self):
        """Test that a constant depth list maps to zeros."""
        assert depth_importance([3.0, 3.0]).tolist() == [0.0, 0.0]

    def test_inverted(self):
        """Test the inverted variant: nearest -> 1."""
        np.testing.assert_allclose(depth_importance([2.0, 4.0], invert=True), [1.0, 0.0])


class TestPiecewise:
    """Tests for the step-function baseline."""

    def test_matches_three_way_branch(self, rng):
        """Test bin selection against an explicit if/else."""
        depths = rng.uniform(0.0, 6.0, 300)
        imp = rng.uniform(size=300)
        got = piecewise_probability(imp, depths, 2.0, 4.0, 0.5, 0.25)
        for d, i, p in zip(depths, imp, got):
            if d <= 2.0:
                expected = i
            elif d <= 4.0:
                expected = 0.5 * i
            else:
                expected = 0.25 * i
            assert p == expected

    def test_threshold_order(self):
        """Test that d_near must be below d_middle."""
        with pytest.raises(ThresholdOrderError):
            piecewise_probability([0.5], [1.0], 3.0, 2.0, 0.5, 0.25)
        with pytest.raises(ThresholdOrderError):
            piecewise_probability([0.5], [1.0], 0.0, 2.0, 0.5, 0.25)


class TestContinuousWeight:
    """Tests for the sigmoid depth weight."""

    def test_value_at_center(self):
        """Test W(tau) = (1 + lambda_base) / 2."""
        for lam in (0.1, 0.3, 0.75, 1.0):
            assert continuous_weight(2.5, lam, 10.0, 2.5) == pytest.approx((1 + lam) / 2, abs=1e-12)

    def test_known_value(self):
        """Test kappa=10, tau=1, lambda_base=0.3 at d=1.2."""
        expected = 0.3 + 0.7 / (1.0 + np.exp(2.0))
        assert continuous_weight(1.2, 0.3, 10.0, 1.0) == pytest.approx(expected, abs=1e-12)
        assert continuous_weight(1.2, 0.3, 10.0, 1.0) == pytest.approx(0.38344, abs=1e-5)

    def test_bounds_and_saturation(self):
        """Test the asymptotes, including extreme depths without overflow."""
        w = continuous_weight(np.array([-1e6, 1e6]), 0.3, 10.0, 1.0)
        assert w[0] == pytest.approx(1.0)
        assert w[1] == pytest.approx(0.3)
        sweep = continuous_weight(SWEEP, 0.3, 10.0, 2.0)
        assert np.all((sweep >= 0.3) & (sweep <= 1.0))

    def test_strictly_decreasing_and_lipschitz(self):
        """Test monotonicity and the kappa (1 - lambda_base) / 4 slope bound."""
        lam, kappa = 0.3, 10.0
        w = continuous_weight(SWEEP, lam, kappa, 3.0)
        steps = np.diff(w)
        assert np.all(steps < 0)
        bound = (1 - lam) * kappa * np.diff(SWEEP) / 4
        assert np.all(np.abs(steps) <= bound + 1e-15)

    def test_scalar_in_scalar_out(self):
        """Test that a scalar depth returns a plain float."""
        assert isinstance(continuous_weight(1.0, 0.3, 10.0, 1.0), float)


class TestDropoutProbability:
    """Tests for dropout_probability across modes."""

    def test_piecewise_jumps_continuous_does_not(self):
        """Test that DDGS jumps at both thresholds while CDGD stays smooth on the same sweep."""
        config = CalibConfig()
        _, _, ddgs = dropout_probability(SWEEP, config, DropoutMode.DDGS)
        _, _, cdgd = dropout_probability(SWEEP, config, DropoutMode.CDGD, tau=3.0)
        cdgd_max = np.abs(np.diff(cdgd)).max()
        ddgs_steps = np.abs(np.diff(ddgs))
        assert cdgd_max < 0.01
        jumps = np.flatnonzero(ddgs_steps > 0.05)
        assert len(jumps) == 2
        for k, threshold in zip(jumps, (config.d_near, config.d_middle)):
            assert SWEEP[k] <= threshold < SWEEP[k + 1]
            assert ddgs_steps[k] > 10 * cdgd_max

    def test_cdgd_is_importance_times_weight(self, rng):
        """Test P = D * W in [0, 1]."""
        depths = rng.uniform(1.0, 5.0, 50)
        imp, w, p = dropout_probability(depths, CalibConfig(), DropoutMode.CDGD, tau=2.0)
        np.testing.assert_allclose(p, imp * w)
        assert np.all((p >= 0) & (p <= 1))

    def test_modes(self):
        """Test the off and random modes."""
        depths = np.array([1.0, 2.0, 3.0])
        config = CalibConfig(random_drop_rate=0.2)
        assert dropout_probability(depths, config, DropoutMode.OFF)[2].tolist() == [0.0, 0.0, 0.0]
        assert dropout_probability(depths, config, DropoutMode.RANDOM)[2].tolist() == [0.2, 0.2, 0.2]
        with pytest.raises(ValueError):
            dropout_probability(depths, config, DropoutMode.CDGD)


class TestPlans:
    """Tests for per-view dropout plans."""

    def test_empirical_drop_rate(self):
        """Test that a constant probability of 0.3 drops 30% of 100k draws."""
        mask = sample_mask(np.full(100_000, 0.3), seed=11)
        assert abs((~mask).mean() - 0.3) < 0.01

    def test_iteration_seed(self):
        """Test that iteration seeds are reproducible and distinct."""
        assert iteration_seed(7, 100) == iteration_seed(7, 100)
        assert iteration_seed(7, 100) != iteration_seed(7, 101)
        assert iteration_seed(7, 100) != iteration_seed(8, 100)

    def test_plan_spans_full_set(self, camera):
        """Test that culled Gaussians are kept with zero probability."""
        means = [[0.0, 0.0, z] for z in np.linspace(-1.0, 2.0, 12)] + [[0.0, 0.0, -4.0]]
        g = isotropic_gaussians(means, 0.05, 0.5, 0.5)
        proj = project(g, camera)
        plan = make_plan(proj, len(g), CalibConfig(), DropoutMode.CDGD, seed=3)
        assert plan.mask.shape == (13,)
        assert plan.mask[12]
        assert plan.probability[12] == 0.0
        assert plan.probability[0] == 0.0  # nearest visible
        assert plan.probability[11] > 0.0
        assert plan.tau == pytest.approx(float(np.median(proj.depth)))
        np.testing.assert_allclose(plan.opacity_scale(), 1.0 / (1.0 - plan.probability))

    def test_plan_is_deterministic(self, gaussians, camera):
        """Test that the same seed draws the same mask."""
        proj = project(gaussians, camera)
        first = make_plan(proj, len(gaussians), CalibConfig(), "cdgd", seed=42)
        second = make_plan(proj, len(gaussians), CalibConfig(), "cdgd", seed=42)
        np.testing.assert_array_equal(first.mask, second.mask)

    def test_off_keeps_everything(self, gaussians, camera):
        """Test that the off mode drops nothing."""
        plan = make_plan(project(gaussians, camera), len(gaussians), CalibConfig(), DropoutMode.OFF, seed=1)
        assert plan.dropped == 0
        assert plan.tau is None

    def test_ddgs_plan(self, camera):
        """Test that the piecewise mode uses raw depth bins."""
        means = [[0.0, 0.0, z] for z in (-1.5, -0.5, 0.5, 1.5)]  # depths 1.5, 2.5, 3.5, 4.5
        g = isotropic_gaussians(means, 0.05, 0.5, 0.5)
        plan = make_plan(project(g, camera), 4, CalibConfig(), DropoutMode.DDGS, seed=0)
        imp = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        np.testing.assert_allclose(plan.probability, imp * np.array([1.0, 0.5, 0.5, 0.25]))


class TestTau:
    """Tests for the sigmoid center."""

    def test_fixed_mode(self, gaussians, camera):
        """Test that fixed mode ignores the scene."""
        config = CalibConfig(tau_center_mode="fixed", tau_fixed=2.25)
        assert resolve_tau(project(gaussians, camera), config) == 2.25

    def test_global_tau(self, gaussians, camera):
        """Test that a pooled median is used when enabled."""
        config = CalibConfig(global_tau=True)
        assert resolve_tau(project(gaussians, camera), config, global_tau=9.0) == 9.0
        assert global_median_depth(gaussians, [camera]) == pytest.approx(float(np.median(project(gaussians, camera).depth)))

    def test_nothing_visible(self, gaussians, camera):
        """Test that median mode with an empty projection raises."""
        empty = project(gaussians, camera, mask=np.zeros(len(gaussians), dtype=bool))
        with pytest.raises(NoVisibleGaussiansError):
            resolve_tau(empty, CalibConfig())
