"""
Gaussian projection from world space to the image plane.

Camera-space means are projected with the pinhole model and 3D covariances
are mapped to pixel space with the local affine (EWA) approximation
cov2d = J W cov3d W^T J^T, followed by a low-pass floor on the diagonal.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core.exceptions import NoVisibleGaussiansError
from src.core.models import Camera, GaussianSet, quat_to_rotmat

logger = logging.getLogger(__name__)

DEFAULT_LOW_PASS = 0.3
DEFAULT_EXTENT_SIGMA = 3.0
# Means further than this fraction of the image size outside the frame are culled
GUARD_BAND = 0.5


@dataclass(frozen=True)
class Projected2DGaussian:
    """One splat on the image plane."""

    mean2d: tuple[float, float]
    cov2d: tuple[tuple[float, float], tuple[float, float]]
    depth: float
    source_index: int


@dataclass
class ProjectedGaussians:
    """
    Depth-sorted splats for one camera, struct-of-arrays.

    Besides the public splat fields this keeps the intermediates the backward
    pass needs (camera-space means, Jacobians, rotation and scale factors).
    """

    source_index: np.ndarray  # (M,) int
    mean2d: np.ndarray  # (M, 2)
    cov2d: np.ndarray  # (M, 2, 2), low-pass included
    conic: np.ndarray  # (M, 3) inverse covariance entries (A, B, C)
    depth: np.ndarray  # (M,)
    radius: np.ndarray  # (M,) pixel half-extent of the splat box
    opacity: np.ndarray  # (M,) activated, after any dropout rescale
    colors: np.ndarray  # (M, 3)
    p_cam: np.ndarray  # (M, 3)
    jacobian: np.ndarray  # (M, 2, 3)
    cov3d: np.ndarray  # (M, 3, 3)
    rotmats: np.ndarray  # (M, 3, 3)
    scales: np.ndarray  # (M, 3)
    opacity_scale: np.ndarray  # (M,)
    skipped_singular: int = 0

    def __len__(self) -> int:
        return self.source_index.shape[0]

    def __getitem__(self, k: int) -> Projected2DGaussian:
        return Projected2DGaussian(
            mean2d=(float(self.mean2d[k, 0]), float(self.mean2d[k, 1])),
            cov2d=(
                (float(self.cov2d[k, 0, 0]), float(self.cov2d[k, 0, 1])),
                (float(self.cov2d[k, 1, 0]), float(self.cov2d[k, 1, 1])),
            ),
            depth=float(self.depth[k]),
            source_index=int(self.source_index[k]),
        )


def compute_cov3d(scales: np.ndarray, rotmats: np.ndarray) -> np.ndarray:
    """cov3d = R S S^T R^T for (N, 3) scales and (N, 3, 3) rotations."""
    M = rotmats * scales[:, None, :]
    return M @ np.transpose(M, (0, 2, 1))


def project(
    gaussians: GaussianSet,
    camera: Camera,
    mask: np.ndarray | None = None,
    low_pass: float = DEFAULT_LOW_PASS,
    extent_sigma: float = DEFAULT_EXTENT_SIGMA,
    opacity_scale: np.ndarray | None = None,
) -> ProjectedGaussians:
    """
    Project Gaussians for one camera.

    Gaussians dropped by `mask` are removed before sorting. Gaussians at or
    in front of the near plane, at or beyond the far plane, or whose mean lies
    outside the guard band around the frame are culled. Output is sorted by
    ascending depth, ties broken by source index.

    Args:
        gaussians: Gaussian set
        camera: Viewing camera
        mask: Optional per-Gaussian keep (True) / drop (False) flags
        low_pass: Pixel variance added to the 2D covariance diagonal
        extent_sigma: Splat box half-size in standard deviations
        opacity_scale: Optional per-Gaussian multiplier on activated opacity

    Returns:
        ProjectedGaussians (possibly empty)
    """
    n = len(gaussians)
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if keep.shape != (n,):
        raise ValueError(f"mask length {keep.shape} does not match {n} gaussians")

    p_cam_all = camera.world_to_camera(gaussians.means)
    z_all = p_cam_all[:, 2]
    keep &= (z_all > camera.near) & (z_all < camera.far)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_all = camera.fx * p_cam_all[:, 0] / z_all + camera.cx
        v_all = camera.fy * p_cam_all[:, 1] / z_all + camera.cy
    w, h = camera.width, camera.height
    keep &= (u_all >= -GUARD_BAND * w) & (u_all <= (1 + GUARD_BAND) * w)
    keep &= (v_all >= -GUARD_BAND * h) & (v_all <= (1 + GUARD_BAND) * h)

    idx = np.flatnonzero(keep)
    p_cam = p_cam_all[idx]
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    scales = gaussians.scales[idx]
    quats = gaussians.quats[idx]
    quats = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    rotmats = quat_to_rotmat(quats)
    cov3d = compute_cov3d(scales, rotmats)

    J = np.zeros((idx.size, 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    T = J @ camera.rotation
    cov2d = T @ cov3d @ np.transpose(T, (0, 2, 1))
    cov2d[:, 0, 0] += low_pass
    cov2d[:, 1, 1] += low_pass

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    ok = np.isfinite(det) & (det > 0) & np.isfinite(cov2d).all(axis=(1, 2))
    skipped = int((~ok).sum())
    if skipped:
        logger.debug(f"Skipping {skipped} splats with singular 2D covariance")

    opacity = gaussians.opacities[idx]
    op_scale = np.ones(idx.size) if opacity_scale is None else np.asarray(opacity_scale)[idx]

    order = np.lexsort((idx[ok], z[ok]))
    sel = np.flatnonzero(ok)[order]

    a, b, c, det = a[sel], b[sel], c[sel], det[sel]
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lambda_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(extent_sigma * np.sqrt(lambda_max))

    return ProjectedGaussians(
        source_index=idx[sel],
        mean2d=np.stack([u_all[idx[sel]], v_all[idx[sel]]], axis=1),
        cov2d=cov2d[sel],
        conic=conic,
        depth=z[sel],
        radius=radius,
        opacity=opacity[sel] * op_scale[sel],
        colors=gaussians.colors[idx[sel]],
        p_cam=p_cam[sel],
        jacobian=J[sel],
        cov3d=cov3d[sel],
        rotmats=rotmats[sel],
        scales=scales[sel],
        opacity_scale=op_scale[sel],
        skipped_singular=skipped,
    )


def visible_depths(gaussians: GaussianSet, camera: Camera) -> np.ndarray:
    """Camera-space depths of Gaussians that survive culling, in source order."""
    proj = project(gaussians, camera)
    return proj.depth[np.argsort(proj.source_index, kind="stable")]


def median_scene_depth(gaussians: GaussianSet, camera: Camera) -> float:
    """
    Median camera-space depth of the non-culled Gaussians.

    Raises:
        NoVisibleGaussiansError: every Gaussian is culled
    """
    depths = project(gaussians, camera).depth
    if depths.size == 0:
        raise NoVisibleGaussiansError()
    return float(np.median(depths))
