"""
Data models for Gaussian scenes.

Gaussians are held struct-of-arrays in a GaussianSet so the renderer can work
on whole arrays; indexing a set yields a single GaussianPrimitive record.
Opacity is stored as a logit and scale as a log-scale, activated at use sites.
"""

from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import EmptySceneError, SceneParseError

ROTATION_TOLERANCE = 1e-6
MIN_IMAGE_SIDE = 8


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray | float) -> np.ndarray:
    """Inverse of sigmoid, clipped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


def quat_to_rotmat(quats: np.ndarray) -> np.ndarray:
    """Convert (N, 4) unit quaternions (w, x, y, z) to (N, 3, 3) rotation matrices."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    R = np.empty((quats.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a single 3x3 rotation matrix to a unit quaternion (w, x, y, z)."""
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        q = [0.25 / s, (R[2, 1] - R[1, 2]) * s, (R[0, 2] - R[2, 0]) * s, (R[1, 0] - R[0, 1]) * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian."""

    position: tuple[float, float, float]
    log_scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # (w, x, y, z)
    opacity_logit: float
    color: tuple[float, float, float]
    dcp_score: float = 0.0

    @property
    def scale(self) -> tuple[float, float, float]:
        """Per-axis standard deviations."""
        return tuple(float(v) for v in np.exp(self.log_scale))

    @property
    def opacity(self) -> float:
        """Activated opacity in [0, 1]."""
        return float(sigmoid(np.array([self.opacity_logit]))[0])


@dataclass
class GaussianSet:
    """
    Ordered collection of Gaussians, one row per primitive.

    Every array shares the leading dimension N.
    """

    means: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) w, x, y, z
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    dcp_scores: np.ndarray = None  # (N,)

    ARRAY_FIELDS = ("means", "log_scales", "quats", "opacity_logits", "colors", "dcp_scores")

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.dcp_scores is None:
            self.dcp_scores = np.zeros(n)
        self.dcp_scores = np.asarray(self.dcp_scores, dtype=np.float64).reshape(n)

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, index: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=tuple(float(v) for v in self.means[index]),
            log_scale=tuple(float(v) for v in self.log_scales[index]),
            rotation=tuple(float(v) for v in self.quats[index]),
            opacity_logit=float(self.opacity_logits[index]),
            color=tuple(float(v) for v in self.colors[index]),
            dcp_score=float(self.dcp_scores[index]),
        )

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        for i in range(len(self)):
            yield self[i]

    @property
    def scales(self) -> np.ndarray:
        """Activated scales, (N, 3)."""
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        """Activated opacities, (N,)."""
        return sigmoid(self.opacity_logits)

    @classmethod
    def empty(cls) -> "GaussianSet":
        """Create a set with no Gaussians."""
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_primitives(cls, primitives: Iterable[GaussianPrimitive]) -> "GaussianSet":
        """Build a set from primitive records."""
        prims = list(primitives)
        if not prims:
            return cls.empty()
        return cls(
            means=[p.position for p in prims],
            log_scales=[p.log_scale for p in prims],
            quats=[p.rotation for p in prims],
            opacity_logits=[p.opacity_logit for p in prims],
            colors=[p.color for p in prims],
            dcp_scores=[p.dcp_score for p in prims],
        )

    def copy(self) -> "GaussianSet":
        """Deep copy."""
        return GaussianSet(**{name: getattr(self, name).copy() for name in self.ARRAY_FIELDS})

    def subset(self, selector: np.ndarray) -> "GaussianSet":
        """Rows picked by a boolean mask or an index array, in selector order."""
        return GaussianSet(**{name: getattr(self, name)[selector].copy() for name in self.ARRAY_FIELDS})

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        """This set followed by `other`."""
        return GaussianSet(
            **{
                name: np.concatenate([getattr(self, name), getattr(other, name)])
                for name in self.ARRAY_FIELDS
            }
        )

    def validate(self, file: str = "") -> None:
        """
        Check primitive invariants.

        Raises:
            EmptySceneError: the set is empty
            SceneParseError: a record is non-finite or violates an invariant
        """
        if len(self) == 0:
            raise EmptySceneError()
        for name in self.ARRAY_FIELDS:
            arr = getattr(self, name)
            bad = ~np.isfinite(arr.reshape(len(self), -1)).all(axis=1)
            if bad.any():
                raise SceneParseError(f"non-finite {name}", file, int(np.argmax(bad)))
        norms = np.linalg.norm(self.quats, axis=1)
        if (norms == 0).any():
            raise SceneParseError("zero-norm rotation", file, int(np.argmax(norms == 0)))
        if (self.scales <= 0).any():
            raise SceneParseError("scale must be > 0", file, int(np.argmax((self.scales <= 0).any(axis=1))))
        if ((self.colors < 0) | (self.colors > 1)).any():
            bad = ((self.colors < 0) | (self.colors > 1)).any(axis=1)
            raise SceneParseError("color outside [0, 1]", file, int(np.argmax(bad)))
        if (self.dcp_scores < 0).any():
            raise SceneParseError("negative dcp_score", file, int(np.argmax(self.dcp_scores < 0)))

    def normalize_rotations(self) -> None:
        """Renormalize quaternions in place."""
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        self.quats = self.quats / np.where(norms > 0, norms, 1.0)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction (+z of the camera) in world coordinates."""
        return self.rotation[2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) world points to camera space."""
        return points @ self.rotation.T + self.translation

    def extrinsic_rows(self) -> list[float]:
        """The 3x4 [R | t] matrix flattened row-major."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(-1).tolist()

    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty when valid)."""
        errors = []
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=ROTATION_TOLERANCE):
            errors.append("extrinsic rotation is not orthonormal")
        if self.width < MIN_IMAGE_SIDE or self.height < MIN_IMAGE_SIDE:
            errors.append(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
        if not (0 < self.near < self.far):
            errors.append("require 0 < near < far")
        if self.fx <= 0 or self.fy <= 0:
            errors.append("focal lengths must be positive")
        values = [self.fx, self.fy, self.cx, self.cy, self.near, self.far, *self.extrinsic_rows()]
        if not np.isfinite(values).all():
            errors.append("non-finite camera value")
        return errors

    @classmethod
    def look_at(
        cls,
        eye: np.ndarray,
        target: np.ndarray,
        width: int,
        height: int,
        focal: float,
        up: np.ndarray | None = None,
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        """Camera at `eye` looking at `target` (x right, y down, z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        up = np.array([0.0, -1.0, 0.0]) if up is None else np.asarray(up, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(
            fx=focal,
            fy=focal,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            rotation=R,
            translation=-R @ eye,
            width=width,
            height=height,
            near=near,
            far=far,
        )


@dataclass
class View:
    """A camera paired with its ground-truth image (H, W, 3) in [0, 1]."""

    camera_id: int
    camera: Camera
    image: np.ndarray

    def validate(self) -> list[str]:
        errors = [f"camera {self.camera_id}: {e}" for e in self.camera.validate()]
        if self.image.shape != (self.camera.height, self.camera.width, 3):
            errors.append(
                f"camera {self.camera_id}: image shape {self.image.shape} does not match "
                f"{self.camera.height}x{self.camera.width}x3"
            )
        elif self.image.size and (self.image.min() < 0 or self.image.max() > 1):
            errors.append(f"camera {self.camera_id}: image values outside [0, 1]")
        return errors


@dataclass
class Scene:
    """Gaussians plus training views and a disjoint set of held-out test views."""

    gaussians: GaussianSet
    train_views: list[View] = field(default_factory=list)
    test_views: list[View] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def cameras(self) -> list[Camera]:
        """Training cameras."""
        return [v.camera for v in self.train_views]

    def validate(self) -> list[str]:
        errors = []
        for view in self.train_views + self.test_views:
            errors.extend(view.validate())
        train_ids = {v.camera_id for v in self.train_views}
        overlap = train_ids & {v.camera_id for v in self.test_views}
        if overlap:
            errors.append(f"camera ids shared between train and test: {sorted(overlap)}")
        return errors

    def extent(self) -> float:
        """Radius of the training camera rig around its centroid, times 1.1."""
        if not self.train_views:
            return 1.0
        centers = np.stack([v.camera.center for v in self.train_views])
        radius = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
        return float(radius * 1.1) if radius > 0 else 1.0
