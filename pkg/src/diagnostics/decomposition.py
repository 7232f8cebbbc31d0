"""
Floater / surface decomposition of a render.

With the flagged (floater) splats forming the front of every ray, the
composited color splits exactly into

    C = C_F + T_F * C_surf

where C_F and T_F are the color and transmittance of the floater splats alone
and C_surf is the render of the remaining splats. For a dense field of
low-opacity floaters C_F is close to A * (1 - T_F), A being the expected floater
radiance; the error functions below measure how close.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.calib.dcp import dark_channel
from src.core.exceptions import NoFloaterCoverageError
from src.core.models import Camera, GaussianSet
from src.render.rasterizer import render

logger = logging.getLogger(__name__)

MIN_ATTENUATION = 1e-3


@dataclass
class FloaterDecomposition:
    """Per-pixel floater and surface components of one view."""

    c_f: np.ndarray  # (H, W, 3)
    t_f: np.ndarray  # (H, W)
    c_surf: np.ndarray  # (H, W, 3)
    a_est: np.ndarray  # (3,)
    full: np.ndarray  # (H, W, 3) render of every splat

    @property
    def coverage(self) -> np.ndarray:
        """Pixels touched by at least one floater."""
        return self.t_f < 1.0

    def reconstruction(self) -> np.ndarray:
        """C_F + T_F * C_surf."""
        return self.c_f + self.t_f[:, :, None] * self.c_surf

    def reconstruction_error(self) -> float:
        """Max absolute gap between the full render and the reconstruction."""
        return float(np.abs(self.full - self.reconstruction()).max())


def decompose(
    gaussians: GaussianSet,
    camera: Camera,
    floater_flags: np.ndarray,
    low_pass: float = 0.3,
    extent_sigma: float = 3.0,
    threads: int = 1,
) -> FloaterDecomposition:
    """
    Split a render into floater and surface parts.

    Flagged splats are composited on their own (in their actual depth order)
    to give C_F and T_F; unflagged splats give C_surf.

    Args:
        gaussians: Gaussian set
        camera: Viewing camera
        floater_flags: True for floater Gaussians
        low_pass: 2D covariance floor
        extent_sigma: Splat truncation
        threads: Tile workers

    Returns:
        FloaterDecomposition
    """
    flags = np.asarray(floater_flags, dtype=bool)
    if flags.shape != (len(gaussians),):
        raise ValueError(f"floater_flags length {flags.shape} does not match {len(gaussians)} gaussians")
    kwargs = {"low_pass": low_pass, "extent_sigma": extent_sigma, "threads": threads}

    full = render(gaussians, camera, **kwargs)
    floaters = render(gaussians, camera, mask=flags, **kwargs)
    surface = render(gaussians, camera, mask=~flags, **kwargs)

    weights = floaters.contributions.weight_sum[flags]
    colors = gaussians.colors[flags]
    if weights.sum() > 0:
        a_est = (weights[:, None] * colors).sum(axis=0) / weights.sum()
    elif colors.size:
        a_est = colors.mean(axis=0)
    else:
        a_est = np.zeros(3)

    return FloaterDecomposition(
        c_f=floaters.color,
        t_f=floaters.transmittance,
        c_surf=surface.color,
        a_est=a_est,
        full=full.color,
    )


def haze_approx_error(decomp: FloaterDecomposition) -> float:
    """
    Mean relative error of C_F ~ A * (1 - T_F) over floater-touched pixels.

    Each pixel contributes |C_F - A (1 - T_F)| / max(1 - T_F, 1e-3).

    Raises:
        NoFloaterCoverageError: no pixel has T_F < 1
    """
    covered = decomp.coverage
    if not covered.any():
        raise NoFloaterCoverageError()
    attenuation = 1.0 - decomp.t_f[covered]
    veil = attenuation[:, None] * decomp.a_est[None, :]
    gap = np.linalg.norm(decomp.c_f[covered] - veil, axis=1)
    return float(np.mean(gap / np.maximum(attenuation, MIN_ATTENUATION)))


def dark_channel_approx_error(decomp: FloaterDecomposition) -> float:
    """
    Mean |D(C) - D(A) (1 - T_F)| over floater-touched pixels.

    Small when the surface dark channel is near zero, so the dark channel of
    the render is explained by the floater veil alone.

    Raises:
        NoFloaterCoverageError: no pixel has T_F < 1
    """
    covered = decomp.coverage
    if not covered.any():
        raise NoFloaterCoverageError()
    predicted = float(decomp.a_est.min()) * (1.0 - decomp.t_f[covered])
    return float(np.mean(np.abs(dark_channel(decomp.full)[covered] - predicted)))
