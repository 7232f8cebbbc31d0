"""
Tiled front-to-back alpha compositing of projected Gaussians.

The image is split into 16x16 tiles. Each tile receives the depth-ordered list
of splats whose truncated box overlaps it, and every pixel of the tile is
composited with

    C = sum_i c_i a_i prod_{j<i} (1 - a_j),  a_i = min(o_i exp(-0.5 d^T cov2d^-1 d), 0.99)

stopping once transmittance would fall below 1e-4. The naive renderer walks every
pixel with a scalar loop over all splats and serves as the oracle.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from src.core.models import Camera, GaussianSet

from .projection import DEFAULT_EXTENT_SIGMA, DEFAULT_LOW_PASS, ProjectedGaussians, project

logger = logging.getLogger(__name__)

TILE_SIZE = 16
ALPHA_MAX = 0.99
TRANSMITTANCE_MIN = 1e-4
DEFAULT_VIS_EPSILON = 1e-4


# ==================== Output types ====================


@dataclass
class Contributions:
    """Per-Gaussian contribution record, indexed by source Gaussian."""

    max_weight: np.ndarray  # (N,) max per-pixel blend weight
    pixel_count: np.ndarray  # (N,) pixels with blend weight > vis_epsilon
    weight_sum: np.ndarray  # (N,) total blend weight over the image

    @classmethod
    def zeros(cls, n: int) -> "Contributions":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n))

    def visible(self, vis_epsilon: float = DEFAULT_VIS_EPSILON) -> np.ndarray:
        """Indices of Gaussians with any blend weight above vis_epsilon."""
        return np.flatnonzero(self.max_weight > vis_epsilon)

    def record(self, index: int) -> tuple[float, int]:
        """(max blend weight, pixel count) of one Gaussian."""
        return float(self.max_weight[index]), int(self.pixel_count[index])


@dataclass
class RenderOutput:
    """Result of one forward pass."""

    color: np.ndarray  # (H, W, 3)
    depth_map: np.ndarray  # (H, W)
    transmittance: np.ndarray  # (H, W) after all splats
    accumulated: np.ndarray  # (H, W) sum of blend weights
    contributions: Contributions
    projected: ProjectedGaussians

    @property
    def skipped_singular(self) -> int:
        return self.projected.skipped_singular


# ==================== Tiles ====================


@dataclass(frozen=True)
class Tile:
    """Pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened pixel-center coordinates (px, py), row-major."""
        ys, xs = np.mgrid[self.y0 : self.y1, self.x0 : self.x1]
        return xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)


def make_tiles(width: int, height: int, tile_size: int = TILE_SIZE) -> list[Tile]:
    """Row-major tile grid covering the image."""
    return [
        Tile(x0, y0, min(x0 + tile_size, width), min(y0 + tile_size, height))
        for y0 in range(0, height, tile_size)
        for x0 in range(0, width, tile_size)
    ]


def splat_bounds(proj: ProjectedGaussians, width: int, height: int) -> tuple[np.ndarray, ...]:
    """Integer pixel boxes of each splat clipped to the image, plus a non-empty flag."""
    u, v, r = proj.mean2d[:, 0], proj.mean2d[:, 1], proj.radius
    x_lo = np.maximum(np.ceil(u - r), 0)
    x_hi = np.minimum(np.floor(u + r), width - 1)
    y_lo = np.maximum(np.ceil(v - r), 0)
    y_hi = np.minimum(np.floor(v + r), height - 1)
    valid = (x_lo <= x_hi) & (y_lo <= y_hi)
    return x_lo, x_hi, y_lo, y_hi, valid


def bin_splats(proj: ProjectedGaussians, tiles: list[Tile], width: int, height: int) -> list[np.ndarray]:
    """Per-tile indices into `proj` of overlapping splats, depth order preserved."""
    x_lo, x_hi, y_lo, y_hi, valid = splat_bounds(proj, width, height)
    bins = []
    for tile in tiles:
        hit = valid & (x_lo <= tile.x1 - 1) & (x_hi >= tile.x0) & (y_lo <= tile.y1 - 1) & (y_hi >= tile.y0)
        bins.append(np.flatnonzero(hit))
    return bins


# ==================== Per-tile compositing ====================


@dataclass
class TileForward:
    """Forward intermediates of one tile, arrays shaped (K splats, P pixels)."""

    splats: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    gauss: np.ndarray
    alpha: np.ndarray  # after clamping and early termination
    clamped: np.ndarray
    active: np.ndarray
    t_before: np.ndarray
    weights: np.ndarray
    t_final: np.ndarray  # (P,)
    color: np.ndarray  # (P, 3)
    depth: np.ndarray  # (P,)
    accumulated: np.ndarray  # (P,)


def tile_forward(proj: ProjectedGaussians, splats: np.ndarray, px: np.ndarray, py: np.ndarray) -> TileForward:
    """
    Composite the given depth-ordered splats over a set of pixels.

    Args:
        proj: Projected splats
        splats: Indices into proj, ascending depth
        px: Pixel x coordinates, (P,)
        py: Pixel y coordinates, (P,)

    Returns:
        TileForward with per-pixel outputs and the intermediates for backward
    """
    n_pix = px.size
    u = proj.mean2d[splats, 0][:, None]
    v = proj.mean2d[splats, 1][:, None]
    r = proj.radius[splats][:, None]
    conic = proj.conic[splats]
    a, b, c = conic[:, 0:1], conic[:, 1:2], conic[:, 2:3]

    dx = px[None, :] - u
    dy = py[None, :] - v
    inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    gauss = np.where(inside, np.exp(power), 0.0)

    raw = proj.opacity[splats][:, None] * gauss
    clamped = raw > ALPHA_MAX
    alpha = np.minimum(raw, ALPHA_MAX)
    # Early termination drops the splat that would push transmittance below the floor
    active = np.cumprod(1.0 - alpha, axis=0) >= TRANSMITTANCE_MIN
    alpha = np.where(active, alpha, 0.0)

    t_incl = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.vstack([np.ones((1, n_pix)), t_incl[:-1]])
    weights = alpha * t_before
    t_final = t_incl[-1] if splats.size else np.ones(n_pix)

    accumulated = weights.sum(axis=0)
    color = weights.T @ proj.colors[splats]
    depth_num = weights.T @ proj.depth[splats]
    depth = np.divide(depth_num, accumulated, out=np.zeros(n_pix), where=accumulated > 0)

    return TileForward(
        splats=splats,
        dx=dx,
        dy=dy,
        gauss=gauss,
        alpha=alpha,
        clamped=clamped,
        active=active,
        t_before=t_before,
        weights=weights,
        t_final=t_final,
        color=color,
        depth=depth,
        accumulated=accumulated,
    )


# ==================== Rendering ====================


def _empty_output(camera: Camera, proj: ProjectedGaussians, n_total: int) -> RenderOutput:
    h, w = camera.height, camera.width
    return RenderOutput(
        color=np.zeros((h, w, 3)),
        depth_map=np.zeros((h, w)),
        transmittance=np.ones((h, w)),
        accumulated=np.zeros((h, w)),
        contributions=Contributions.zeros(n_total),
        projected=proj,
    )


def rasterize(
    proj: ProjectedGaussians,
    camera: Camera,
    n_total: int,
    vis_epsilon: float = DEFAULT_VIS_EPSILON,
    threads: int = 1,
    tile_size: int = TILE_SIZE,
) -> RenderOutput:
    """
    Composite projected splats with the tiled renderer.

    Tiles are independent; with threads > 1 they run on a thread pool and are
    merged in tile order, so the output does not depend on the thread count.

    Args:
        proj: Depth-sorted splats for this camera
        camera: Camera the splats were projected with
        n_total: Size of the source Gaussian set (for the contribution record)
        vis_epsilon: Blend weight above which a pixel counts as touched
        threads: Worker count
        tile_size: Tile side in pixels

    Returns:
        RenderOutput
    """
    out = _empty_output(camera, proj, n_total)
    if len(proj) == 0:
        return out

    tiles = make_tiles(camera.width, camera.height, tile_size)
    bins = bin_splats(proj, tiles, camera.width, camera.height)

    def run_tile(tile: Tile, splats: np.ndarray) -> TileForward | None:
        if splats.size == 0:
            return None
        px, py = tile.pixels()
        return tile_forward(proj, splats, px, py)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_tile, tiles, bins))
    else:
        results = [run_tile(t, s) for t, s in zip(tiles, bins)]

    m = len(proj)
    max_w = np.zeros(m)
    count = np.zeros(m, dtype=np.int64)
    wsum = np.zeros(m)
    for tile, res in zip(tiles, results):
        if res is None:
            continue
        shape = (tile.y1 - tile.y0, tile.x1 - tile.x0)
        region = (slice(tile.y0, tile.y1), slice(tile.x0, tile.x1))
        out.color[region] = res.color.reshape(*shape, 3)
        out.depth_map[region] = res.depth.reshape(shape)
        out.transmittance[region] = res.t_final.reshape(shape)
        out.accumulated[region] = res.accumulated.reshape(shape)
        s = res.splats
        max_w[s] = np.maximum(max_w[s], res.weights.max(axis=1))
        count[s] += (res.weights > vis_epsilon).sum(axis=1)
        wsum[s] += res.weights.sum(axis=1)

    _scatter_contributions(out.contributions, proj, max_w, count, wsum)
    return out


def _scatter_contributions(
    contrib: Contributions, proj: ProjectedGaussians, max_w: np.ndarray, count: np.ndarray, wsum: np.ndarray
) -> None:
    contrib.max_weight[proj.source_index] = max_w
    contrib.pixel_count[proj.source_index] = count
    contrib.weight_sum[proj.source_index] = wsum


def render(
    gaussians: GaussianSet,
    camera: Camera,
    mask: np.ndarray | None = None,
    opacity_scale: np.ndarray | None = None,
    low_pass: float = DEFAULT_LOW_PASS,
    extent_sigma: float = DEFAULT_EXTENT_SIGMA,
    vis_epsilon: float = DEFAULT_VIS_EPSILON,
    threads: int = 1,
) -> RenderOutput:
    """
    Render Gaussians from a camera.

    Args:
        gaussians: Gaussian set
        camera: Viewing camera
        mask: Optional keep (True) / drop (False) flag per Gaussian
        opacity_scale: Optional per-Gaussian opacity multiplier
        low_pass: 2D covariance floor in px^2
        extent_sigma: Splat truncation in standard deviations
        vis_epsilon: Visibility threshold for the contribution record
        threads: Tile worker count

    Returns:
        RenderOutput on a black background
    """
    proj = project(
        gaussians, camera, mask=mask, low_pass=low_pass, extent_sigma=extent_sigma, opacity_scale=opacity_scale
    )
    if proj.skipped_singular:
        logger.warning(f"Skipped {proj.skipped_singular} splats with singular covariance")
    return rasterize(proj, camera, len(gaussians), vis_epsilon=vis_epsilon, threads=threads)


def render_naive(
    gaussians: GaussianSet,
    camera: Camera,
    mask: np.ndarray | None = None,
    opacity_scale: np.ndarray | None = None,
    low_pass: float = DEFAULT_LOW_PASS,
    extent_sigma: float = DEFAULT_EXTENT_SIGMA,
    vis_epsilon: float = DEFAULT_VIS_EPSILON,
) -> RenderOutput:
    """
    Reference renderer: a scalar front-to-back loop per pixel over every splat.

    Shares only the projection with `render`. Slow; meant for small test images.
    """
    proj = project(
        gaussians, camera, mask=mask, low_pass=low_pass, extent_sigma=extent_sigma, opacity_scale=opacity_scale
    )
    out = _empty_output(camera, proj, len(gaussians))
    m = len(proj)
    if m == 0:
        return out

    order = np.argsort(proj.depth, kind="stable").tolist()
    mean2d = proj.mean2d.tolist()
    radius = proj.radius.tolist()
    conic = proj.conic.tolist()
    opacity = proj.opacity.tolist()
    colors = proj.colors.tolist()
    depth = proj.depth.tolist()

    max_w = [0.0] * m
    count = [0] * m
    wsum = [0.0] * m
    for y in range(camera.height):
        for x in range(camera.width):
            t = 1.0
            rgb = [0.0, 0.0, 0.0]
            depth_num = 0.0
            acc = 0.0
            for k in order:
                dx = x - mean2d[k][0]
                dy = y - mean2d[k][1]
                if abs(dx) > radius[k] or abs(dy) > radius[k]:
                    continue
                a, b, c = conic[k]
                alpha = min(opacity[k] * math.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy), ALPHA_MAX)
                if t * (1.0 - alpha) < TRANSMITTANCE_MIN:
                    break
                weight = alpha * t
                for ch in range(3):
                    rgb[ch] += weight * colors[k][ch]
                depth_num += weight * depth[k]
                acc += weight
                t *= 1.0 - alpha
                max_w[k] = max(max_w[k], weight)
                count[k] += weight > vis_epsilon
                wsum[k] += weight
            out.color[y, x] = rgb
            out.depth_map[y, x] = depth_num / acc if acc > 0 else 0.0
            out.transmittance[y, x] = t
            out.accumulated[y, x] = acc

    _scatter_contributions(out.contributions, proj, np.array(max_w), np.array(count, dtype=np.int64), np.array(wsum))
    return out
