"""
Depth-guided Gaussian dropout.

Per training iteration each visible Gaussian is dropped with a probability
built from its camera depth. Three depth-aware schedules are available: the
piecewise step baseline (near / middle / far bins), the continuous sigmoid
weighting, and plain uniform dropout for reference.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from src.config import CalibConfig, DropoutMode, TauCenterMode
from src.core.exceptions import NoVisibleGaussiansError, ThresholdOrderError
from src.core.models import Camera, GaussianSet
from src.render.projection import ProjectedGaussians, project

logger = logging.getLogger(__name__)


# ==================== Probability components ====================


def depth_importance(depths: np.ndarray, invert: bool = False) -> np.ndarray:
    """
    Min-max normalized depth, nearest -> 0 and farthest -> 1.

    Args:
        depths: Camera-space depths
        invert: Return 1 - D instead (nearest -> 1)

    Returns:
        Array in [0, 1]; all zeros when every depth is equal
    """
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size == 0:
        return depths.copy()
    lo, hi = depths.min(), depths.max()
    if hi == lo:
        return np.zeros_like(depths)
    importance = (depths - lo) / (hi - lo)
    return 1.0 - importance if invert else importance


def piecewise_probability(
    importance: np.ndarray,
    depths: np.ndarray,
    d_near: float,
    d_middle: float,
    lambda_middle: float,
    lambda_far: float,
) -> np.ndarray:
    """
    Step-function dropout probability on raw depth.

    P = D for d <= d_near, lambda_middle * D for d_near < d <= d_middle,
    lambda_far * D beyond.

    Raises:
        ThresholdOrderError: unless 0 < d_near < d_middle
    """
    if not (0 < d_near < d_middle):
        raise ThresholdOrderError(d_near, d_middle)
    importance = np.asarray(importance, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    factor = np.where(depths <= d_near, 1.0, np.where(depths <= d_middle, lambda_middle, lambda_far))
    return importance * factor


def continuous_weight(d, lambda_base: float, kappa: float, tau: float):
    """
    W(d) = lambda_base + (1 - lambda_base) / (1 + exp(kappa * (d - tau))).

    Strictly decreasing from 1 (near) to lambda_base (far); saturates instead
    of overflowing for extreme depths.
    """
    weight = lambda_base + (1.0 - lambda_base) * expit(-kappa * (np.asarray(d, dtype=np.float64) - tau))
    return float(weight) if np.ndim(weight) == 0 else weight


def dropout_probability(
    depths: np.ndarray,
    config: CalibConfig,
    mode: DropoutMode,
    tau: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Importance, weight and probability for a set of visible depths.

    Args:
        depths: Camera-space depths of the visible Gaussians
        config: Dropout parameters
        mode: Dropout schedule
        tau: Sigmoid center for the continuous schedule

    Returns:
        (importance, weight, probability), each shaped like depths
    """
    depths = np.asarray(depths, dtype=np.float64)
    importance = depth_importance(depths, invert=config.invert_importance)
    weight = np.ones_like(depths)

    if mode == DropoutMode.OFF:
        probability = np.zeros_like(depths)
    elif mode == DropoutMode.RANDOM:
        probability = np.full_like(depths, config.random_drop_rate)
    elif mode == DropoutMode.DDGS:
        probability = piecewise_probability(
            importance, depths, config.d_near, config.d_middle, config.lambda_middle, config.lambda_far
        )
    else:
        if tau is None:
            raise ValueError("continuous dropout needs a tau center")
        weight = np.asarray(continuous_weight(depths, config.lambda_base, config.kappa, tau))
        probability = importance * weight

    return importance, weight, np.clip(probability, 0.0, 1.0)


# ==================== Plans ====================


@dataclass
class DropoutPlan:
    """
    Dropout draw for one training render.

    Arrays span the full Gaussian set; Gaussians culled for this view have
    zero importance, unit weight, zero probability and are always kept.
    """

    depth_importance: np.ndarray
    weight: np.ndarray
    probability: np.ndarray
    mask: np.ndarray  # True = keep
    rng_seed: int
    mode: DropoutMode = DropoutMode.OFF
    tau: float | None = None
    visible: np.ndarray | None = None  # indices of non-culled Gaussians

    @property
    def dropped(self) -> int:
        return int((~self.mask).sum())

    def opacity_scale(self) -> np.ndarray:
        """Survivor compensation 1 / (1 - P)."""
        return 1.0 / np.maximum(1.0 - self.probability, 1e-6)


def iteration_seed(seed: int, iteration: int) -> int:
    """Deterministic per-iteration seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(iteration)]).generate_state(1)[0])


def sample_mask(probability: np.ndarray, seed: int) -> np.ndarray:
    """Keep each entry with probability 1 - P (True = keep)."""
    rng = np.random.default_rng(seed)
    return rng.random(np.shape(probability)) >= probability


def resolve_tau(projected: ProjectedGaussians, config: CalibConfig, global_tau: float | None = None) -> float:
    """
    Sigmoid center for one view.

    Fixed mode returns config.tau_fixed; median mode uses the pooled value when
    global_tau is set, otherwise the median depth of this view.

    Raises:
        NoVisibleGaussiansError: median mode with nothing visible
    """
    if config.tau_mode == TauCenterMode.FIXED:
        return config.tau_fixed
    if config.global_tau and global_tau is not None:
        return global_tau
    if len(projected) == 0:
        raise NoVisibleGaussiansError()
    return float(np.median(projected.depth))


def global_median_depth(gaussians: GaussianSet, cameras: list[Camera]) -> float:
    """Median depth pooled over every camera's visible Gaussians."""
    depths = [project(gaussians, cam).depth for cam in cameras]
    pooled = np.concatenate(depths) if depths else np.zeros(0)
    if pooled.size == 0:
        raise NoVisibleGaussiansError()
    return float(np.median(pooled))


def make_plan(
    projected: ProjectedGaussians,
    n_total: int,
    config: CalibConfig,
    mode: DropoutMode | str,
    seed: int,
    global_tau: float | None = None,
) -> DropoutPlan:
    """
    Build a dropout plan for one view.

    Args:
        projected: Unmasked projection of the Gaussian set for this view
        n_total: Gaussian count
        config: Dropout parameters
        mode: Dropout schedule
        seed: Seed for the Bernoulli draw
        global_tau: Pooled median depth, used when config.global_tau is set

    Returns:
        DropoutPlan
    """
    mode = DropoutMode(mode)
    importance = np.zeros(n_total)
    weight = np.ones(n_total)
    probability = np.zeros(n_total)
    idx = projected.source_index

    if mode == DropoutMode.OFF or len(projected) == 0:
        return DropoutPlan(importance, weight, probability, np.ones(n_total, dtype=bool), seed, mode, None, idx)

    tau = resolve_tau(projected, config, global_tau) if mode == DropoutMode.CDGD else None
    imp, w, p = dropout_probability(projected.depth, config, mode, tau)
    importance[idx] = imp
    weight[idx] = w
    probability[idx] = p

    mask = sample_mask(probability, seed)
    logger.debug(f"Dropout {mode.value}: dropped {int((~mask).sum())}/{idx.size} visible (tau={tau})")
    return DropoutPlan(importance, weight, probability, mask, seed, mode, tau, idx)
