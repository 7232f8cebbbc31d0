"""
Analytic backward pass from an image-space gradient to Gaussian parameters.

The tile compositing is differentiated per tile (splat colors, activated
opacities, 2D means and conics), then the per-splat 2D gradients are chained
through the EWA projection to world-space means, log-scales, quaternions and
opacity logits.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from src.core.models import Camera, GaussianSet
from src.render.projection import DEFAULT_EXTENT_SIGMA, DEFAULT_LOW_PASS, ProjectedGaussians
from src.render.rasterizer import (
    DEFAULT_VIS_EPSILON,
    RenderOutput,
    Tile,
    bin_splats,
    make_tiles,
    render,
    tile_forward,
)

from .loss import loss_and_grad

logger = logging.getLogger(__name__)


@dataclass
class GaussianGradients:
    """Loss gradients for every Gaussian of a set, zero for Gaussians not rendered."""

    means: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4), tangent to the unit sphere
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    mean2d_norm: np.ndarray  # (N,) densification signal in NDC units
    in_view: np.ndarray  # (N,) bool, contributed to at least one pixel

    GROUPS = ("means", "log_scales", "quats", "opacity_logits", "colors")

    @classmethod
    def zeros(cls, n: int) -> "GaussianGradients":
        return cls(
            means=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            quats=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)),
            mean2d_norm=np.zeros(n),
            in_view=np.zeros(n, dtype=bool),
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    def finite_rows(self) -> np.ndarray:
        """Per-Gaussian flag: every parameter gradient is finite."""
        ok = np.ones(len(self), dtype=bool)
        for name in self.GROUPS:
            arr = getattr(self, name)
            ok &= np.isfinite(arr.reshape(len(self), -1)).all(axis=1)
        return ok

    def flat(self, index: int) -> np.ndarray:
        """The 14 parameter partials of one Gaussian, group order."""
        return np.concatenate([np.ravel(getattr(self, name)[index]) for name in self.GROUPS])


# ==================== Per-tile backward ====================


def _tile_backward(proj: ProjectedGaussians, tile: Tile, splats: np.ndarray, grad_image: np.ndarray) -> dict:
    px, py = tile.pixels()
    fwd = tile_forward(proj, splats, px, py)
    g_pix = grad_image[tile.y0 : tile.y1, tile.x0 : tile.x1].reshape(-1, 3)  # (P, 3)
    colors = proj.colors[splats]  # (K, 3)
    opacity = proj.opacity[splats][:, None]

    g_color = fwd.weights @ g_pix

    # dC/da_k = c_k T_k - (sum_{m>k} c_m w_m) / (1 - a_k)
    wc = fwd.weights[:, :, None] * colors[:, None, :]
    cum = np.cumsum(wc, axis=0)
    suffix = cum[-1][None] - cum
    dc_dalpha = fwd.t_before[:, :, None] * colors[:, None, :] - suffix / (1.0 - fwd.alpha)[:, :, None]
    g_alpha = (dc_dalpha * g_pix[None]).sum(axis=2)
    g_alpha = np.where(fwd.active & ~fwd.clamped, g_alpha, 0.0)

    g_opacity = (g_alpha * fwd.gauss).sum(axis=1)
    g_power = g_alpha * opacity * fwd.gauss

    conic = proj.conic[splats]
    a, b, c = conic[:, 0:1], conic[:, 1:2], conic[:, 2:3]
    dx, dy = fwd.dx, fwd.dy
    g_u = (g_power * (a * dx + b * dy)).sum(axis=1)
    g_v = (g_power * (b * dx + c * dy)).sum(axis=1)
    g_q00 = (-0.5 * g_power * dx * dx).sum(axis=1)
    g_q01 = (-0.5 * g_power * dx * dy).sum(axis=1)
    g_q11 = (-0.5 * g_power * dy * dy).sum(axis=1)

    return {
        "color": g_color,
        "opacity": g_opacity,
        "u": g_u,
        "v": g_v,
        "conic": np.stack([g_q00, g_q01, g_q11], axis=1),
        "touched": fwd.weights.max(axis=1) > 0,
    }


# ==================== Chain through projection ====================


def _quat_grad(quats: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. unnormalized quaternions given dL/dR, projected to the tangent."""
    norm = np.linalg.norm(quats, axis=1, keepdims=True)
    q = quats / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    G = g_rot
    dw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    dx = 2 * (
        y * G[:, 0, 1]
        + z * G[:, 0, 2]
        + y * G[:, 1, 0]
        - 2 * x * G[:, 1, 1]
        - w * G[:, 1, 2]
        + z * G[:, 2, 0]
        + w * G[:, 2, 1]
        - 2 * x * G[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * G[:, 0, 0]
        + x * G[:, 0, 1]
        + w * G[:, 0, 2]
        + x * G[:, 1, 0]
        + z * G[:, 1, 2]
        - w * G[:, 2, 0]
        + z * G[:, 2, 1]
        - 2 * y * G[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * G[:, 0, 0]
        - w * G[:, 0, 1]
        + x * G[:, 0, 2]
        + w * G[:, 1, 0]
        - 2 * z * G[:, 1, 1]
        + y * G[:, 1, 2]
        + x * G[:, 2, 0]
        + y * G[:, 2, 1]
    )
    g_unit = np.stack([dw, dx, dy, dz], axis=1)
    radial = (g_unit * q).sum(axis=1, keepdims=True)
    return (g_unit - q * radial) / norm


def _chain_projection(
    proj: ProjectedGaussians,
    camera: Camera,
    gaussians: GaussianSet,
    g_u: np.ndarray,
    g_v: np.ndarray,
    g_conic: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-space mean, log-scale and quaternion gradients of the projected splats."""
    W = camera.rotation
    fx, fy = camera.fx, camera.fy
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]

    A, B, C = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    Q = np.stack([np.stack([A, B], axis=1), np.stack([B, C], axis=1)], axis=1)
    GQ = np.stack(
        [np.stack([g_conic[:, 0], g_conic[:, 1]], axis=1), np.stack([g_conic[:, 1], g_conic[:, 2]], axis=1)],
        axis=1,
    )
    g_cov2d = -Q @ GQ @ Q

    T = proj.jacobian @ W
    g_cov3d = np.transpose(T, (0, 2, 1)) @ g_cov2d @ T
    g_T = 2.0 * g_cov2d @ T @ proj.cov3d
    g_J = g_T @ W.T

    z2, z3 = z * z, z * z * z
    g_cam = np.zeros((len(proj), 3))
    g_cam[:, 0] = g_J[:, 0, 2] * (-fx / z2) + g_u * fx / z
    g_cam[:, 1] = g_J[:, 1, 2] * (-fy / z2) + g_v * fy / z
    g_cam[:, 2] = (
        g_J[:, 0, 0] * (-fx / z2)
        + g_J[:, 0, 2] * (2.0 * fx * x / z3)
        + g_J[:, 1, 1] * (-fy / z2)
        + g_J[:, 1, 2] * (2.0 * fy * y / z3)
        - g_u * fx * x / z2
        - g_v * fy * y / z2
    )
    g_means = g_cam @ W

    # cov3d = M M^T with M = R diag(s)
    M = proj.rotmats * proj.scales[:, None, :]
    g_M = 2.0 * g_cov3d @ M
    g_scale = (g_M * proj.rotmats).sum(axis=1)
    g_log_scale = g_scale * proj.scales
    g_rot = g_M * proj.scales[:, None, :]
    g_quat = _quat_grad(gaussians.quats[proj.source_index], g_rot)
    return g_means, g_log_scale, g_quat


# ==================== Public API ====================


def render_backward(
    out: RenderOutput,
    gaussians: GaussianSet,
    camera: Camera,
    grad_image: np.ndarray,
    threads: int = 1,
) -> GaussianGradients:
    """
    Backpropagate an image gradient through a completed forward pass.

    Args:
        out: Forward pass for this camera (its projection is reused)
        gaussians: Gaussian set that was rendered
        camera: Camera used for the forward pass
        grad_image: dL/dcolor, (H, W, 3)
        threads: Tile worker count

    Returns:
        GaussianGradients over the whole set
    """
    proj = out.projected
    grads = GaussianGradients.zeros(len(gaussians))
    m = len(proj)
    if m == 0:
        return grads

    tiles = make_tiles(camera.width, camera.height)
    bins = bin_splats(proj, tiles, camera.width, camera.height)
    work = [(t, s) for t, s in zip(tiles, bins) if s.size]

    def run(item):
        return _tile_backward(proj, item[0], item[1], grad_image)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(item) for item in work]

    g_color = np.zeros((m, 3))
    g_opacity = np.zeros(m)
    g_u = np.zeros(m)
    g_v = np.zeros(m)
    g_conic = np.zeros((m, 3))
    touched = np.zeros(m, dtype=bool)
    for (_, splats), res in zip(work, results):
        g_color[splats] += res["color"]
        g_opacity[splats] += res["opacity"]
        g_u[splats] += res["u"]
        g_v[splats] += res["v"]
        g_conic[splats] += res["conic"]
        touched[splats] |= res["touched"]

    g_means, g_log_scales, g_quats = _chain_projection(proj, camera, gaussians, g_u, g_v, g_conic)

    idx = proj.source_index
    sig = proj.opacity / proj.opacity_scale
    grads.means[idx] = g_means
    grads.log_scales[idx] = g_log_scales
    grads.quats[idx] = g_quats
    grads.opacity_logits[idx] = g_opacity * proj.opacity_scale * sig * (1.0 - sig)
    grads.colors[idx] = g_color
    grads.mean2d_norm[idx] = np.hypot(g_u * 0.5 * camera.width, g_v * 0.5 * camera.height)
    grads.in_view[idx] = touched
    return grads


def backward(
    gaussians: GaussianSet,
    camera: Camera,
    gt: np.ndarray,
    mask: np.ndarray | None = None,
    lambda1: float = 0.2,
    opacity_scale: np.ndarray | None = None,
    low_pass: float = DEFAULT_LOW_PASS,
    extent_sigma: float = DEFAULT_EXTENT_SIGMA,
    vis_epsilon: float = DEFAULT_VIS_EPSILON,
    threads: int = 1,
) -> tuple[float, GaussianGradients]:
    """
    Loss and parameter gradients for one view.

    Masked-out and culled Gaussians get exactly zero gradients.

    Returns:
        (loss, GaussianGradients)
    """
    out = render(
        gaussians,
        camera,
        mask=mask,
        opacity_scale=opacity_scale,
        low_pass=low_pass,
        extent_sigma=extent_sigma,
        vis_epsilon=vis_epsilon,
        threads=threads,
    )
    value, grad_image = loss_and_grad(out.color, gt, lambda1)
    return value, render_backward(out, gaussians, camera, grad_image, threads=threads)
