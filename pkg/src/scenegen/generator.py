"""
Synthetic benchmark scenes.

A scene is a set of flat surface Gaussians on simple template geometry, an
arc of training cameras, a held-out rig raised above the training arc, and
ground-truth images rendered from the clean scene itself.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.config import CalibConfig
from src.core.exceptions import ConfigValidationError
from src.core.io import quantize
from src.core.models import Camera, GaussianSet, Scene, View, logit
from src.render.rasterizer import render

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 32
SURFACE_OPACITY = 0.9
TANGENT_SCALE = 0.7  # in units of the mean point spacing
NORMAL_SCALE = 0.08

# Saturated colors: every entry has a channel near zero so clean renders keep a dark dark channel
PALETTE = np.array(
    [
        [0.90, 0.12, 0.03],
        [0.03, 0.75, 0.20],
        [0.10, 0.30, 0.92],
        [0.92, 0.80, 0.03],
        [0.65, 0.02, 0.80],
        [0.02, 0.60, 0.70],
    ]
)


class SceneTemplate(Enum):
    """Surface geometry of a generated scene."""

    TEXTURED_WALL = "textured-wall"
    TWO_PLANE_BOX = "two-plane-box"
    SPHERE_FIELD = "sphere-field"


@dataclass
class SceneSpec:
    """Parameters of one generated scene."""

    template: str = SceneTemplate.TEXTURED_WALL.value
    n_surface: int = 2000
    n_cameras: int = 6
    n_test: int = 2
    rig_radius: float = 3.0
    rig_arc_deg: float = 50.0
    test_elevation_deg: float = 12.0
    image_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        """
        Raises:
            ConfigValidationError: naming the offending field
        """
        if self.template not in {t.value for t in SceneTemplate}:
            raise ConfigValidationError(f"unknown template {self.template!r}", "template")
        for name in ("n_surface", "n_cameras", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigValidationError(f"must be > 0 (got {getattr(self, name)})", name)
        if self.image_size < MIN_IMAGE_SIZE:
            raise ConfigValidationError(f"must be >= {MIN_IMAGE_SIZE} (got {self.image_size})", "image_size")
        if self.rig_radius <= 0:
            raise ConfigValidationError(f"must be > 0 (got {self.rig_radius})", "rig_radius")
        if abs(self.test_elevation_deg) <= 5.0:
            raise ConfigValidationError("test rig must sit more than 5 degrees off the training arc",
                                        "test_elevation_deg")

    def to_metadata(self) -> dict:
        return {
            "template": self.template,
            "n_surface": self.n_surface,
            "n_cameras": self.n_cameras,
            "n_test": self.n_test,
            "rig_radius": self.rig_radius,
            "rig_arc_deg": self.rig_arc_deg,
            "test_elevation_deg": self.test_elevation_deg,
            "image_size": self.image_size,
            "seed": self.seed,
        }


# ==================== Surface sampling ====================


def align_z_quats(normals: np.ndarray) -> np.ndarray:
    """Quaternions (w, x, y, z) rotating local +z onto each unit normal."""
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    quats = np.stack([1.0 + nz, -ny, nx, np.zeros_like(nz)], axis=1)
    flipped = quats[:, 0] < 1e-9  # normal == -z
    quats[flipped] = [0.0, 1.0, 0.0, 0.0]
    return quats / np.linalg.norm(quats, axis=1, keepdims=True)


def texture_colors(u: np.ndarray, v: np.ndarray, cells: float = 2.5) -> np.ndarray:
    """Checker-like palette lookup over surface coordinates in [-1, 1]."""
    iu = np.floor(cells * (u + 1.0)).astype(np.int64)
    iv = np.floor(cells * (v + 1.0)).astype(np.int64)
    return PALETTE[(iu + 2 * iv) % len(PALETTE)]


def _plane(rng, count, origin, axis_u, axis_v, half_u, half_v):
    """Uniform samples on a rectangle; returns positions, normals and texture coordinates."""
    u = rng.uniform(-1.0, 1.0, count)
    v = rng.uniform(-1.0, 1.0, count)
    axis_u, axis_v = np.asarray(axis_u, float), np.asarray(axis_v, float)
    positions = np.asarray(origin, float) + (half_u * u)[:, None] * axis_u + (half_v * v)[:, None] * axis_v
    normal = np.cross(axis_u, axis_v)
    normals = np.repeat(normal[None, :], count, axis=0)
    area = 4.0 * half_u * half_v
    return positions, normals, u, v, area


def _sample_wall(rng, n):
    pos, nrm, u, v, area = _plane(rng, n, (0.0, 0.0, 0.0), (1, 0, 0), (0, 1, 0), 1.0, 1.0)
    return pos, nrm, texture_colors(u, v), area


def _sample_box(rng, n):
    # Back wall at z = 0.5 and a floor at y = 0.8 (image-down is +y) reaching toward the rig
    n_wall = int(round(n * 0.6))
    wall = _plane(rng, n_wall, (0.0, -0.1, 0.5), (1, 0, 0), (0, 1, 0), 1.0, 0.9)
    floor = _plane(rng, n - n_wall, (0.0, 0.8, -0.05), (1, 0, 0), (0, 0, 1), 1.0, 0.55)
    pos = np.concatenate([wall[0], floor[0]])
    nrm = np.concatenate([wall[1], floor[1]])
    colors = np.concatenate([texture_colors(wall[2], wall[3]), texture_colors(floor[2], -floor[3], cells=1.5)])
    return pos, nrm, colors, wall[4] + floor[4]


def _sample_spheres(rng, n, n_spheres=5):
    centers = np.column_stack(
        [rng.uniform(-0.7, 0.7, n_spheres), rng.uniform(-0.7, 0.7, n_spheres), rng.uniform(-0.1, 0.5, n_spheres)]
    )
    radii = rng.uniform(0.2, 0.35, n_spheres)
    which = rng.integers(0, n_spheres, n)
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    pos = centers[which] + radii[which, None] * nrm
    colors = PALETTE[which % len(PALETTE)].copy()
    # Darker band around each equator
    band = np.abs(nrm[:, 1]) < 0.25
    colors[band] *= 0.5
    return pos, nrm, colors, float(np.sum(4.0 * np.pi * radii**2))


SAMPLERS = {
    SceneTemplate.TEXTURED_WALL: _sample_wall,
    SceneTemplate.TWO_PLANE_BOX: _sample_box,
    SceneTemplate.SPHERE_FIELD: _sample_spheres,
}


def surface_gaussians(spec: SceneSpec, rng: np.random.Generator) -> GaussianSet:
    """Flat Gaussians on the template surface, thin along the normal."""
    positions, normals, colors, area = SAMPLERS[SceneTemplate(spec.template)](rng, spec.n_surface)
    spacing = np.sqrt(area / spec.n_surface)
    log_scales = np.log(np.tile([TANGENT_SCALE * spacing, TANGENT_SCALE * spacing, NORMAL_SCALE * spacing],
                                (spec.n_surface, 1)))
    return GaussianSet(
        means=positions,
        log_scales=log_scales,
        quats=align_z_quats(normals),
        opacity_logits=np.full(spec.n_surface, float(logit(SURFACE_OPACITY))),
        colors=np.clip(colors, 0.0, 1.0),
    )


# ==================== Camera rigs ====================


def rig_eye(radius: float, azimuth_deg: float, elevation_deg: float, center: np.ndarray) -> np.ndarray:
    """Camera position on a sphere around `center`, facing +z at zero azimuth."""
    az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
    offset = np.array([np.sin(az) * np.cos(el), -np.sin(el), -np.cos(az) * np.cos(el)])
    return center + radius * offset


def make_rigs(spec: SceneSpec, center: np.ndarray) -> tuple[list[Camera], list[Camera]]:
    """Training arc at zero elevation and a raised held-out arc."""
    half = spec.rig_arc_deg / 2.0
    train_az = np.linspace(-half, half, spec.n_cameras) if spec.n_cameras > 1 else np.zeros(1)
    test_az = np.linspace(-half, half, spec.n_test + 2)[1:-1] if spec.n_test > 0 else np.zeros(0)
    size = spec.image_size

    def camera(az: float, el: float) -> Camera:
        return Camera.look_at(rig_eye(spec.rig_radius, az, el, center), center, size, size, focal=float(size))

    train = [camera(az, 0.0) for az in train_az]
    test = [camera(az, spec.test_elevation_deg) for az in test_az]
    return train, test


def min_angular_separation(first: list[Camera], second: list[Camera], center: np.ndarray) -> float:
    """Smallest angle in degrees between camera directions seen from `center`."""
    def directions(cams):
        d = np.stack([c.center - center for c in cams])
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    cos = np.clip(directions(first) @ directions(second).T, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos.max())))


# ==================== Scene ====================


def render_ground_truth(
    gaussians: GaussianSet, cameras: list[Camera], calib: CalibConfig | None = None, threads: int = 1
) -> list[np.ndarray]:
    """Quantized clean renders, one per camera, in camera order."""
    calib = calib or CalibConfig()

    def one(camera: Camera) -> np.ndarray:
        out = render(gaussians, camera, low_pass=calib.low_pass, extent_sigma=calib.splat_extent_sigma)
        return quantize(np.clip(out.color, 0.0, 1.0))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, cameras))


def generate(spec: SceneSpec, calib: CalibConfig | None = None, threads: int = 1) -> Scene:
    """
    Build a scene from a spec.

    Args:
        spec: Scene parameters
        calib: Render settings for the ground truth (defaults match training)
        threads: Parallel ground-truth renders

    Returns:
        Scene whose training and test images are renders of its own Gaussians
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    gaussians = surface_gaussians(spec, rng)
    center = gaussians.means.mean(axis=0)
    train_cams, test_cams = make_rigs(spec, center)

    images = render_ground_truth(gaussians, train_cams + test_cams, calib, threads)
    train_views = [View(i, cam, images[i]) for i, cam in enumerate(train_cams)]
    offset = len(train_cams)
    test_views = [View(offset + i, cam, images[offset + i]) for i, cam in enumerate(test_cams)]

    logger.info(
        f"Generated {spec.template} scene: {len(gaussians)} gaussians, "
        f"{len(train_views)} train / {len(test_views)} test views at {spec.image_size}px"
    )
    return Scene(gaussians=gaussians, train_views=train_views, test_views=test_views, metadata=spec.to_metadata())
