"""
Gradient-driven densification and low-opacity culling.

Gaussians whose mean 2D position gradient over the densification window
exceeds the threshold are grown: small ones are cloned in place, large ones
are split into two children along their major axis.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.config import CalibConfig
from src.core.models import GaussianSet, quat_to_rotmat
from src.optim.backward import GaussianGradients

from .state import TrainState

logger = logging.getLogger(__name__)

SPLIT_SCALE_DIVISOR = 1.6
SPLIT_OFFSET_SIGMA = 0.5


@dataclass
class DensifyResult:
    """Counts of one densification pass."""

    cloned: int = 0
    split: int = 0
    culled: int = 0

    @property
    def changed(self) -> bool:
        return bool(self.cloned or self.split or self.culled)


def accumulate_gradients(state: TrainState, grads: GaussianGradients) -> None:
    """Add this iteration's densification signal for Gaussians in view."""
    seen = grads.in_view
    state.grad_accum[seen] += grads.mean2d_norm[seen]
    state.grad_count[seen] += 1


def split_children(gaussians: GaussianSet, indices: np.ndarray) -> GaussianSet:
    """
    Two children per parent at +/- 0.5 sigma along the major axis, scales / 1.6.

    Children keep the parent's rotation, opacity, color and score.
    """
    parents = gaussians.subset(indices)
    scales = parents.scales
    major = np.argmax(scales, axis=1)
    rotmats = quat_to_rotmat(parents.quats / np.linalg.norm(parents.quats, axis=1, keepdims=True))
    rows = np.arange(len(parents))
    axis = rotmats[rows, :, major]  # world direction of each major axis
    offset = SPLIT_OFFSET_SIGMA * scales[rows, major][:, None] * axis

    first = parents.copy()
    second = parents.copy()
    first.means = parents.means + offset
    second.means = parents.means - offset
    for child in (first, second):
        child.log_scales = parents.log_scales - np.log(SPLIT_SCALE_DIVISOR)
    # Interleave so each parent's children are adjacent
    order = np.stack([rows, rows + len(parents)], axis=1).ravel()
    return first.concat(second).subset(order)


def densify(state: TrainState, config: CalibConfig, extent: float) -> DensifyResult:
    """
    Clone, split and cull on the densification schedule.

    Args:
        state: Training state with accumulated gradients
        config: Densification thresholds
        extent: Scene extent; the clone/split boundary is percent_dense * extent

    Returns:
        DensifyResult with per-operation counts
    """
    result = DensifyResult()
    gaussians = state.gaussians
    avg = np.divide(
        state.grad_accum, state.grad_count, out=np.zeros(len(gaussians)), where=state.grad_count > 0
    )
    over = avg >= config.densify_grad_threshold
    max_scale = gaussians.scales.max(axis=1)
    dense_limit = config.densify_percent_dense * extent
    clone_idx = np.flatnonzero(over & (max_scale <= dense_limit))
    split_idx = np.flatnonzero(over & (max_scale > dense_limit))

    if clone_idx.size:
        state.append(gaussians.subset(clone_idx), clone_idx)
        result.cloned = int(clone_idx.size)
        state.log_event("clone", count=result.cloned)

    if split_idx.size:
        children = split_children(state.gaussians, split_idx)
        state.append(children, np.repeat(split_idx, 2))
        keep = np.ones(len(state.gaussians), dtype=bool)
        keep[split_idx] = False
        state.remove(keep)
        result.split = int(split_idx.size)
        state.log_event("split", count=result.split)

    low = state.gaussians.opacities < config.cull_opacity
    if low.any() and not low.all():
        state.remove(~low)
        result.culled = int(low.sum())
        state.log_event("cull", count=result.culled)
    elif low.all():
        logger.warning(f"Iteration {state.iteration}: opacity cull would remove every gaussian, skipping")

    state.reset_accumulators()
    state.log_event(
        "densify", cloned=result.cloned, split=result.split, culled=result.culled, count_after=len(state.gaussians)
    )
    logger.info(
        f"Iteration {state.iteration}: densify +{result.cloned} clones, +{result.split} splits, "
        f"-{result.culled} culled ({len(state.gaussians)} gaussians)"
    )
    return result
