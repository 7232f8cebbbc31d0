"""Builders shared by the test modules."""

import numpy as np

from src.core.models import GaussianSet, logit


def random_gaussians(
    rng: np.random.Generator,
    n: int,
    xy_spread: float = 0.6,
    z_range: tuple[float, float] = (-0.5, 0.5),
    scale_range: tuple[float, float] = (0.05, 0.2),
    opacity_range: tuple[float, float] = (0.2, 0.8),
    color_range: tuple[float, float] = (0.0, 1.0),
) -> GaussianSet:
    """Random anisotropic Gaussians around the origin."""
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianSet(
        means=np.column_stack(
            [rng.uniform(-xy_spread, xy_spread, n), rng.uniform(-xy_spread, xy_spread, n), rng.uniform(*z_range, n)]
        ),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))),
        quats=quats,
        opacity_logits=logit(rng.uniform(*opacity_range, n)),
        colors=rng.uniform(*color_range, (n, 3)),
    )


def isotropic_gaussians(means, scale: float, opacity, colors) -> GaussianSet:
    """Isotropic Gaussians with identity rotations."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    n = means.shape[0]
    return GaussianSet(
        means=means,
        log_scales=np.full((n, 3), np.log(scale)),
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=logit(np.broadcast_to(np.asarray(opacity, dtype=np.float64), (n,))),
        colors=np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy(),
    )
