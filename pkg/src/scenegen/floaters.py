"""
Floater injection.

Floaters are small isotropic low-opacity Gaussians placed in the free space
between the training rig and the surface, along segments from a camera center
toward a point on the surface's front. Ground-truth images are left untouched,
so every floater is pure degradation.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core.exceptions import ConfigValidationError
from src.core.models import GaussianSet, Scene, logit

logger = logging.getLogger(__name__)

FOOTPRINT_SIGMA = 3.0


@dataclass
class FloaterSpec:
    """
    Floater field parameters.

    The slab is given as fractions of the way from a camera center to the
    surface front: (0.25, 0.75) keeps floaters clear of both.
    """

    count: int = 500
    opacity_range: tuple[float, float] = (0.02, 0.15)
    color_mean: tuple[float, float, float] = (0.8, 0.8, 0.8)
    color_std: float = 0.03
    scale_mean: float = 0.04
    slab: tuple[float, float] = (0.25, 0.75)

    def validate(self) -> None:
        """
        Raises:
            ConfigValidationError: naming the offending field
        """
        lo, hi = self.opacity_range
        if self.count < 0:
            raise ConfigValidationError(f"must be >= 0 (got {self.count})", "count")
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigValidationError(f"must lie inside (0, 1) (got {self.opacity_range})", "opacity_range")
        if any(not 0.0 <= c <= 1.0 for c in self.color_mean):
            raise ConfigValidationError(f"must be in [0, 1] (got {self.color_mean})", "color_mean")
        if self.color_std < 0:
            raise ConfigValidationError(f"must be >= 0 (got {self.color_std})", "color_std")
        if self.scale_mean <= 0:
            raise ConfigValidationError(f"must be > 0 (got {self.scale_mean})", "scale_mean")
        near, far = self.slab
        if not (0.0 < near < far < 1.0):
            raise ConfigValidationError(f"require 0 < near < far < 1 (got {self.slab})", "slab")

    @property
    def opacity_mean(self) -> float:
        return 0.5 * (self.opacity_range[0] + self.opacity_range[1])


def surface_front(gaussians: GaussianSet) -> float:
    """Smallest z reached by the 3-sigma footprint of any surface Gaussian."""
    reach = FOOTPRINT_SIGMA * gaussians.scales.max(axis=1)
    return float(np.min(gaussians.means[:, 2] - reach))


def sample_floaters(scene: Scene, fspec: FloaterSpec, rng: np.random.Generator) -> GaussianSet:
    """
    Draw fspec.count floaters for a scene.

    Raises:
        ConfigValidationError: the slab would reach the surface
    """
    surface = scene.gaussians
    centers = np.stack([v.camera.center for v in scene.train_views])
    z_front = surface_front(surface)
    lo_xy = surface.means[:, :2].min(axis=0)
    hi_xy = surface.means[:, :2].max(axis=0)

    k = fspec.count
    origin = centers[rng.integers(0, len(centers), k)]
    target = np.column_stack(
        [rng.uniform(lo_xy[0], hi_xy[0], k), rng.uniform(lo_xy[1], hi_xy[1], k), np.full(k, z_front)]
    )
    t = rng.uniform(fspec.slab[0], fspec.slab[1], k)
    means = origin + t[:, None] * (target - origin)

    scales = fspec.scale_mean * rng.uniform(0.5, 1.5, k)
    if k and np.max(means[:, 2] + FOOTPRINT_SIGMA * scales) >= z_front:
        raise ConfigValidationError("floater slab intersects the surface", "slab")

    colors = np.asarray(fspec.color_mean)[None, :] + fspec.color_std * rng.normal(size=(k, 3))
    opacities = rng.uniform(fspec.opacity_range[0], fspec.opacity_range[1], k)
    return GaussianSet(
        means=means,
        log_scales=np.repeat(np.log(scales)[:, None], 3, axis=1),
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (k, 1)),
        opacity_logits=logit(opacities),
        colors=np.clip(colors, 0.0, 1.0),
    )


def inject_floaters(scene: Scene, fspec: FloaterSpec, seed: int) -> tuple[Scene, np.ndarray]:
    """
    Append a floater field to a scene.

    Args:
        scene: Clean scene (not modified)
        fspec: Floater field parameters
        seed: RNG seed for the floater draw

    Returns:
        (new scene, floater flags) where the flags mark exactly the appended suffix
    """
    fspec.validate()
    if not scene.train_views:
        raise ValueError("floater injection needs at least one training view")
    n = len(scene.gaussians)
    floaters = sample_floaters(scene, fspec, np.random.default_rng(seed)) if fspec.count else GaussianSet.empty()
    flags = np.concatenate([np.zeros(n, dtype=bool), np.ones(len(floaters), dtype=bool)])

    metadata = dict(scene.metadata)
    if fspec.count:
        metadata.update(floater_count=fspec.count, floater_seed=seed, floater_opacity_mean=fspec.opacity_mean)
    injected = Scene(
        gaussians=scene.gaussians.concat(floaters),
        train_views=list(scene.train_views),
        test_views=list(scene.test_views),
        metadata=metadata,
    )
    logger.info(f"Injected {len(floaters)} floaters (mean opacity {fspec.opacity_mean:.3f}) into {n} gaussians")
    return injected, flags
