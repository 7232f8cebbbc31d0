"""
Adam optimizer over per-Gaussian parameter groups.

Each group keeps first/second moment arrays with one row per Gaussian so
densification and pruning can reshape the optimizer alongside the set.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.core.exceptions import SceneParseError, SceneWriteError
from src.core.models import GaussianSet

from .backward import GaussianGradients

logger = logging.getLogger(__name__)

GROUPS = GaussianGradients.GROUPS
OPTIMIZER_NAME = "optimizer.bin"


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    exp_avg: np.ndarray,
    exp_avg_sq: np.ndarray,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-15,
) -> None:
    """
    One bias-corrected Adam update, all arrays modified in place.

    Args:
        param: Parameter array
        grad: Gradient, same shape
        exp_avg: First moment
        exp_avg_sq: Second moment
        step: 1-based step count
        lr: Learning rate
    """
    exp_avg *= beta1
    exp_avg += (1.0 - beta1) * grad
    exp_avg_sq *= beta2
    exp_avg_sq += (1.0 - beta2) * (grad * grad)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    param -= (lr / bc1) * exp_avg / (np.sqrt(exp_avg_sq / bc2) + eps)


def exponential_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear interpolation from lr_init to lr_final over max_steps."""
    t = float(np.clip(step / max(max_steps, 1), 0.0, 1.0))
    return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))


@dataclass
class OptimizerState:
    """Adam moments, learning rates and step count for a Gaussian set."""

    exp_avg: dict[str, np.ndarray]
    exp_avg_sq: dict[str, np.ndarray]
    lrs: dict[str, float]
    lr_position_final: float
    max_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    step_count: int = 0
    skipped_nonfinite: int = 0

    @classmethod
    def create(cls, n: int, config, extent: float = 1.0) -> "OptimizerState":
        """
        Fresh state for n Gaussians.

        Args:
            n: Gaussian count
            config: CalibConfig with learning rates and Adam constants
            extent: Scene extent multiplying the position learning rates
        """
        scale = extent if config.position_lr_scale_by_extent else 1.0
        return cls(
            exp_avg={g: np.zeros(_group_shape(g, n)) for g in GROUPS},
            exp_avg_sq={g: np.zeros(_group_shape(g, n)) for g in GROUPS},
            lrs={
                "means": config.lr_position_init * scale,
                "log_scales": config.lr_scale,
                "quats": config.lr_rotation,
                "opacity_logits": config.lr_opacity,
                "colors": config.lr_color,
            },
            lr_position_final=config.lr_position_final * scale,
            max_steps=config.total_iters,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    def __len__(self) -> int:
        return self.exp_avg["means"].shape[0]

    def learning_rate(self, group: str) -> float:
        """Current learning rate of a group (positions decay exponentially)."""
        if group == "means":
            return exponential_lr(self.step_count, self.lrs["means"], self.lr_position_final, self.max_steps)
        return self.lrs[group]

    def step(self, grads: GaussianGradients, gaussians: GaussianSet) -> int:
        """
        Apply one Adam step to every Gaussian with finite gradients.

        Gaussians with any non-finite gradient keep their parameters and
        moments for this step. Quaternions are renormalized and colors clipped
        to [0, 1] afterwards.

        Returns:
            Number of Gaussians skipped for non-finite gradients
        """
        self.step_count += 1
        ok = grads.finite_rows()
        skipped = int((~ok).sum())
        if skipped:
            self.skipped_nonfinite += skipped
            logger.warning(f"Step {self.step_count}: skipped {skipped} gaussians with non-finite gradients")

        for group in GROUPS:
            param = getattr(gaussians, group)
            grad = getattr(grads, group)
            if skipped:
                p, m, v = param[ok], self.exp_avg[group][ok], self.exp_avg_sq[group][ok]
                adam_update(p, grad[ok], m, v, self.step_count, self.learning_rate(group), self.beta1, self.beta2, self.eps)
                param[ok], self.exp_avg[group][ok], self.exp_avg_sq[group][ok] = p, m, v
            else:
                adam_update(
                    param,
                    grad,
                    self.exp_avg[group],
                    self.exp_avg_sq[group],
                    self.step_count,
                    self.learning_rate(group),
                    self.beta1,
                    self.beta2,
                    self.eps,
                )

        gaussians.normalize_rotations()
        np.clip(gaussians.colors, 0.0, 1.0, out=gaussians.colors)
        return skipped

    # ==================== Reshaping ====================

    def keep(self, selector: np.ndarray) -> None:
        """Retain the moment rows picked by a boolean mask or index array."""
        for group in GROUPS:
            self.exp_avg[group] = self.exp_avg[group][selector]
            self.exp_avg_sq[group] = self.exp_avg_sq[group][selector]

    def append(self, n: int) -> None:
        """Append zero moments for n new Gaussians."""
        for group in GROUPS:
            self.exp_avg[group] = np.concatenate([self.exp_avg[group], np.zeros(_group_shape(group, n))])
            self.exp_avg_sq[group] = np.concatenate([self.exp_avg_sq[group], np.zeros(_group_shape(group, n))])

    def moments_finite(self) -> bool:
        return all(np.isfinite(self.exp_avg[g]).all() and np.isfinite(self.exp_avg_sq[g]).all() for g in GROUPS)


def _group_shape(group: str, n: int) -> tuple[int, ...]:
    return {"means": (n, 3), "log_scales": (n, 3), "quats": (n, 4), "opacity_logits": (n,), "colors": (n, 3)}[group]


# ==================== Persistence ====================


def save_optimizer(state: OptimizerState, path: str | Path) -> None:
    """
    Write moments as consecutive .npy records in fixed group order.

    The header record holds [step_count, skipped_nonfinite].
    """
    path = Path(path)
    try:
        with path.open("wb") as f:
            np.save(f, np.array([state.step_count, state.skipped_nonfinite], dtype=np.int64), allow_pickle=False)
            for group in GROUPS:
                np.save(f, state.exp_avg[group], allow_pickle=False)
                np.save(f, state.exp_avg_sq[group], allow_pickle=False)
    except OSError as e:
        raise SceneWriteError(str(e), str(path)) from e


def load_optimizer(path: str | Path, template: OptimizerState) -> OptimizerState:
    """Read moments saved by save_optimizer into a copy of `template`'s settings."""
    path = Path(path)
    try:
        with path.open("rb") as f:
            header = np.load(f, allow_pickle=False)
            exp_avg, exp_avg_sq = {}, {}
            for group in GROUPS:
                exp_avg[group] = np.load(f, allow_pickle=False)
                exp_avg_sq[group] = np.load(f, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise SceneParseError(f"cannot read optimizer state: {e}", str(path)) from e
    return OptimizerState(
        exp_avg=exp_avg,
        exp_avg_sq=exp_avg_sq,
        lrs=dict(template.lrs),
        lr_position_final=template.lr_position_final,
        max_steps=template.max_steps,
        beta1=template.beta1,
        beta2=template.beta2,
        eps=template.eps,
        step_count=int(header[0]),
        skipped_nonfinite=int(header[1]),
    )
