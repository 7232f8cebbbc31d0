"""Tests for the Adam optimizer state."""

import numpy as np
import pytest

from src.config import CalibConfig
from src.core.exceptions import SceneParseError
from src.optim.adam import OptimizerState, adam_update, exponential_lr, load_optimizer, save_optimizer
from src.optim.backward import GaussianGradients
from tests.helpers import isotropic_gaussians


def one_gaussian():
    return isotropic_gaussians([[0.0, 0.0, 0.0]], 0.1, 0.5, 0.5)


class TestAdamUpdate:
    """Tests for the raw update rule."""

    def test_first_step_moves_by_learning_rate(self):
        """Test that the bias-corrected first step has magnitude lr."""
        param = np.array([1.0, -1.0])
        m, v = np.zeros(2), np.zeros(2)
        adam_update(param, np.array([3.0, -0.5]), m, v, step=1, lr=0.1, eps=0.0)
        np.testing.assert_allclose(param, [0.9, -0.9])

    def test_exponential_schedule(self):
        """Test the log-linear learning rate decay endpoints and midpoint."""
        assert exponential_lr(0, 1e-2, 1e-4, 100) == pytest.approx(1e-2)
        assert exponential_lr(100, 1e-2, 1e-4, 100) == pytest.approx(1e-4)
        assert exponential_lr(50, 1e-2, 1e-4, 100) == pytest.approx(1e-3)
        assert exponential_lr(500, 1e-2, 1e-4, 100) == pytest.approx(1e-4)


class TestOptimizerState:
    """Tests for OptimizerState."""

    def test_quadratic_converges(self):
        """Test that step drives x to the minimizer of (x - 2)^2 within 500 steps."""
        config = CalibConfig(
            lr_position_init=0.05, lr_position_final=0.05, position_lr_scale_by_extent=False, total_iters=500
        )
        g = one_gaussian()
        opt = OptimizerState.create(1, config)
        for _ in range(500):
            grads = GaussianGradients.zeros(1)
            grads.means[0, 0] = 2.0 * (g.means[0, 0] - 2.0)
            opt.step(grads, g)
        assert abs(g.means[0, 0] - 2.0) < 1e-3
        assert g.means[0, 1] == 0.0
        assert opt.step_count == 500

    def test_position_lr_scaled_by_extent(self):
        """Test that position learning rates scale with the scene extent."""
        opt = OptimizerState.create(3, CalibConfig(), extent=4.0)
        assert opt.learning_rate("means") == pytest.approx(4.0 * CalibConfig().lr_position_init)
        assert opt.learning_rate("colors") == CalibConfig().lr_color

    def test_non_finite_rows_skipped(self):
        """Test that a NaN gradient leaves that Gaussian and its moments untouched."""
        g = isotropic_gaussians([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 0.1, 0.5, 0.5)
        before = g.copy()
        opt = OptimizerState.create(2, CalibConfig())
        grads = GaussianGradients.zeros(2)
        grads.colors[:] = 0.1
        grads.means[1, 0] = np.nan
        skipped = opt.step(grads, g)
        assert skipped == 1
        assert opt.skipped_nonfinite == 1
        np.testing.assert_array_equal(g.colors[1], before.colors[1])
        assert np.all(opt.exp_avg["colors"][1] == 0.0)
        assert np.all(g.colors[0] < before.colors[0])
        assert opt.moments_finite()

    def test_colors_clipped_and_quats_normalized(self):
        """Test the post-step projections."""
        g = one_gaussian()
        g.colors[:] = 0.999
        opt = OptimizerState.create(1, CalibConfig(lr_color=1.0))
        grads = GaussianGradients.zeros(1)
        grads.colors[:] = -1.0
        grads.quats[0] = [0.0, 1.0, 0.0, 0.0]
        opt.step(grads, g)
        assert np.all(g.colors <= 1.0)
        assert np.linalg.norm(g.quats[0]) == pytest.approx(1.0)

    def test_keep_and_append(self):
        """Test that moments follow prune and densify reshapes."""
        opt = OptimizerState.create(4, CalibConfig())
        opt.exp_avg["opacity_logits"][:] = [1.0, 2.0, 3.0, 4.0]
        opt.keep(np.array([True, False, True, False]))
        assert opt.exp_avg["opacity_logits"].tolist() == [1.0, 3.0]
        opt.append(2)
        assert len(opt) == 4
        assert opt.exp_avg["means"].shape == (4, 3)
        assert opt.exp_avg["opacity_logits"].tolist() == [1.0, 3.0, 0.0, 0.0]


class TestPersistence:
    """Tests for optimizer.bin."""

    def test_round_trip(self, tmp_path, rng):
        """Test that saved moments and counters load back exactly."""
        opt = OptimizerState.create(5, CalibConfig())
        opt.step_count = 17
        opt.skipped_nonfinite = 2
        for group in opt.exp_avg:
            opt.exp_avg[group] = rng.normal(size=opt.exp_avg[group].shape)
            opt.exp_avg_sq[group] = rng.uniform(size=opt.exp_avg_sq[group].shape)
        path = tmp_path / "optimizer.bin"
        save_optimizer(opt, path)
        back = load_optimizer(path, OptimizerState.create(0, CalibConfig()))
        assert (back.step_count, back.skipped_nonfinite) == (17, 2)
        for group in opt.exp_avg:
            np.testing.assert_array_equal(back.exp_avg[group], opt.exp_avg[group])
            np.testing.assert_array_equal(back.exp_avg_sq[group], opt.exp_avg_sq[group])

    def test_corrupt_file(self, tmp_path):
        """Test that a truncated file is a parse error."""
        path = tmp_path / "optimizer.bin"
        path.write_bytes(b"\x93NUMPY garbage")
        with pytest.raises(SceneParseError):
            load_optimizer(path, OptimizerState.create(0, CalibConfig()))
