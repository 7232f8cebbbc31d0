"""
Dark-channel anomaly detection and reliability pruning.

A clean render of an opaque, saturated surface has a low per-pixel channel
minimum; a semi-transparent veil of floaters lifts it towards the floater
radiance. Each monitored view contributes its global violation ratio to the
score of every Gaussian visible in it, and Gaussians with a high score but a
low opacity are pruned periodically.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.ndimage import uniform_filter

from src.config import CalibConfig
from src.core.exceptions import ScheduleError, ShapeMismatchError, WindowSizeError

if TYPE_CHECKING:
    from src.training.state import TrainState

logger = logging.getLogger(__name__)


# ==================== Image statistics ====================


def dark_channel(image: np.ndarray) -> np.ndarray:
    """Per-pixel minimum over color channels (no spatial minimum)."""
    image = np.asarray(image, dtype=np.float64)
    return image if image.ndim == 2 else image.min(axis=2)


def dark_channel_residual(rendered: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    """
    Dark channel of a render minus that of its ground truth; positive where a veil was added.

    Raises:
        ShapeMismatchError: images differ in shape
    """
    if np.shape(rendered) != np.shape(ground_truth):
        raise ShapeMismatchError(np.shape(rendered), np.shape(ground_truth))
    return dark_channel(rendered) - dark_channel(ground_truth)


def local_average(values: np.ndarray, window: int) -> np.ndarray:
    """
    Box mean over a window x window neighborhood, border pixels replicated.

    Raises:
        WindowSizeError: window is even, non-positive or larger than the map
    """
    if window < 1 or window % 2 == 0:
        raise WindowSizeError(window)
    if window > min(values.shape[:2]):
        raise WindowSizeError(window, f"window exceeds map size {values.shape[:2]}")
    return uniform_filter(np.asarray(values, dtype=np.float64), size=window, mode="nearest")


def anomaly_mask(dark: np.ndarray, dark_smoothed: np.ndarray, tau1: float, tau2: float) -> tuple[np.ndarray, float]:
    """
    Pixels whose smoothed dark channel exceeds tau1 and whose own exceeds tau2.

    Returns:
        (bad_mask, violation_ratio)
    """
    bad = (dark_smoothed > tau1) & (dark > tau2)
    return bad, float(bad.mean())


@dataclass
class DcpReport:
    """Dark-channel statistics of one image."""

    dark: np.ndarray
    dark_smoothed: np.ndarray
    bad_mask: np.ndarray
    violation_ratio: float

    def to_dict(self) -> dict:
        return {
            "violation_ratio": self.violation_ratio,
            "mean_dark": float(self.dark.mean()),
            "mean_dark_smoothed": float(self.dark_smoothed.mean()),
            "bad_pixels": int(self.bad_mask.sum()),
        }


def analyze_image(image: np.ndarray, tau1: float = 0.10, tau2: float = 0.05, window: int = 15) -> DcpReport:
    """Dark channel, local average and anomaly mask of an (H, W, 3) image."""
    dark = dark_channel(image)
    smoothed = local_average(dark, window)
    bad, ratio = anomaly_mask(dark, smoothed, tau1, tau2)
    return DcpReport(dark=dark, dark_smoothed=smoothed, bad_mask=bad, violation_ratio=ratio)


def calibrate_thresholds(images: list[np.ndarray], percentile: float = 95.0, window: int = 15) -> tuple[float, float]:
    """
    Suggest (tau1, tau2) as percentiles of the smoothed and raw dark channels.

    Args:
        images: Renders from early training
        percentile: Percentile in [0, 100]
        window: Local-average window

    Returns:
        (tau1, tau2)
    """
    if not images:
        raise ValueError("calibration needs at least one image")
    dark = [dark_channel(img) for img in images]
    smoothed = [local_average(d, window) for d in dark]
    tau1 = float(np.percentile(np.concatenate([s.ravel() for s in smoothed]), percentile))
    tau2 = float(np.percentile(np.concatenate([d.ravel() for d in dark]), percentile))
    logger.info(f"Calibrated thresholds at p{percentile:g}: tau1={tau1:.4f}, tau2={tau2:.4f}")
    return tau1, tau2


# ==================== Score accumulation and pruning ====================


@dataclass
class PruneDecision:
    """Outcome of one pruning event."""

    iteration: int
    threshold_lambda: float
    pruned_indices: list[int] = field(default_factory=list)
    reset_applied: bool = False
    pruned_lineage: list[int] = field(default_factory=list)
    skipped_empty: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "threshold_lambda": self.threshold_lambda,
            "pruned_indices": list(self.pruned_indices),
            "pruned_lineage": list(self.pruned_lineage),
            "reset_applied": self.reset_applied,
            "skipped_empty": self.skipped_empty,
        }


def accumulate(state: "TrainState", report: DcpReport, visible: np.ndarray, config: CalibConfig) -> None:
    """
    Add the view's violation ratio to the score of every visible Gaussian.

    Args:
        state: Training state (scores live on state.gaussians)
        report: Dark-channel report of the clean render
        visible: Indices of Gaussians visible in the view
        config: Supplies t_start

    Raises:
        ScheduleError: before the warm-up ends
    """
    if state.iteration < config.t_start:
        raise ScheduleError(
            f"dcp accumulation at iteration {state.iteration} before t_start={config.t_start}", state.iteration
        )
    visible = np.asarray(visible, dtype=np.int64)
    if report.violation_ratio and visible.size:
        state.gaussians.dcp_scores[visible] += report.violation_ratio


def prune_candidates(scores: np.ndarray, opacities: np.ndarray, threshold: float, alpha_min: float) -> np.ndarray:
    """Boolean mask of Gaussians with score above threshold and opacity below alpha_min."""
    return (scores > threshold) & (opacities < alpha_min)


def prune(state: "TrainState", config: CalibConfig) -> PruneDecision:
    """
    Remove high-score, low-opacity Gaussians.

    Removes exactly those with score > eta * t_prune and activated opacity
    < alpha_min, together with their optimizer moments and accumulators. If
    that would remove every Gaussian nothing is pruned. Scores of survivors
    are reset when dcp_reset_scores is set.

    Raises:
        ScheduleError: iteration is before t_start or not a multiple of t_prune
    """
    it = state.iteration
    if it < config.t_start or it % config.t_prune != 0:
        raise ScheduleError(
            f"prune at iteration {it} is off schedule (t_start={config.t_start}, t_prune={config.t_prune})", it
        )

    threshold = config.prune_threshold
    gaussians = state.gaussians
    candidates = prune_candidates(gaussians.dcp_scores, gaussians.opacities, threshold, config.alpha_min)
    decision = PruneDecision(iteration=it, threshold_lambda=threshold)

    if candidates.all():
        logger.warning(f"Iteration {it}: pruning would remove all {len(gaussians)} gaussians, skipping")
        decision.skipped_empty = True
    elif candidates.any():
        pruned = np.flatnonzero(candidates)
        decision.pruned_indices = pruned.tolist()
        decision.pruned_lineage = state.lineage[pruned].tolist()
        state.remove(~candidates)

    if config.dcp_reset_scores:
        state.gaussians.dcp_scores[:] = 0.0
        decision.reset_applied = True

    state.record_prune(decision)
    logger.info(
        f"Iteration {it}: dcp prune removed {len(decision.pruned_indices)} gaussians "
        f"(lambda={threshold:g}, remaining {len(state.gaussians)})"
    )
    return decision
