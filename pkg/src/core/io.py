"""
Scene persistence.

Scene directory layout:
    gaussians.ply        binary little-endian PLY (3DGS property names, doubles)
    cameras.txt          id fx fy cx cy width height near far + 12 extrinsic floats
    images/<id>.ppm      ground truth, binary P6, maxval 255
    config.txt           key = value scene metadata
    test/cameras.txt     held-out views, same layout
    test/images/<id>.ppm
"""

import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from PIL import Image
from plyfile import PlyData, PlyElement

from .exceptions import SceneParseError, SceneWriteError
from .models import ROTATION_TOLERANCE, Camera, GaussianSet, Scene, View

logger = logging.getLogger(__name__)

# Zeroth-order spherical harmonic constant
SH_C0 = 0.28209479177387814

PLY_NAME = "gaussians.ply"
CAMERAS_NAME = "cameras.txt"
IMAGES_DIR = "images"
SCENE_CONFIG_NAME = "config.txt"
TEST_DIR = "test"
FLOATER_FLAGS_NAME = "floater_flags.txt"

PLY_PROPERTIES = (
    ["x", "y", "z"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + ["opacity"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["dcp_score"]
)

DEPTH_MAGIC = b"DPTH"
DEPTH_VERSION = 1


# ==================== Gaussians ====================


def write_ply(gaussians: GaussianSet, path: Path) -> None:
    """Write Gaussians as a binary little-endian PLY."""
    arrays = [
        gaussians.means,
        gaussians.log_scales,
        gaussians.quats,
        gaussians.opacity_logits[:, None],
        (gaussians.colors - 0.5) / SH_C0,
        gaussians.dcp_scores[:, None],
    ]
    flat = np.hstack(arrays)
    if not np.isfinite(flat).all():
        bad = int(np.argmax(~np.isfinite(flat).all(axis=1)))
        raise SceneWriteError(f"refusing to write non-finite values (record {bad})", str(path))
    vertices = np.empty(len(gaussians), dtype=[(name, "<f8") for name in PLY_PROPERTIES])
    for column, name in enumerate(PLY_PROPERTIES):
        vertices[name] = flat[:, column]
    element = PlyElement.describe(vertices, "vertex")
    try:
        PlyData([element], text=False, byte_order="<").write(str(path))
    except OSError as e:
        raise SceneWriteError(f"cannot write {path}: {e}", str(path)) from e


def read_ply(path: Path) -> GaussianSet:
    """
    Read Gaussians from a PLY written by write_ply (or a 3DGS export).

    Raises:
        SceneParseError: missing file, missing property, or invalid record
    """
    if not path.exists():
        raise SceneParseError("file not found", str(path))
    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"]
    except Exception as e:
        raise SceneParseError(f"malformed PLY: {e}", str(path)) from e

    names = vertex.data.dtype.names
    required = [p for p in PLY_PROPERTIES if p != "dcp_score"]
    missing = [p for p in required if p not in names]
    if missing:
        raise SceneParseError(f"missing properties {missing}", str(path))

    def column(*props: str) -> np.ndarray:
        return np.stack([np.asarray(vertex[p], dtype=np.float64) for p in props], axis=1)

    scores = (
        np.asarray(vertex["dcp_score"], dtype=np.float64)
        if "dcp_score" in names
        else np.zeros(len(vertex.data))
    )
    gaussians = GaussianSet(
        means=column("x", "y", "z"),
        log_scales=column("scale_0", "scale_1", "scale_2"),
        quats=column("rot_0", "rot_1", "rot_2", "rot_3"),
        opacity_logits=np.asarray(vertex["opacity"], dtype=np.float64),
        colors=column("f_dc_0", "f_dc_1", "f_dc_2") * SH_C0 + 0.5,
        dcp_scores=scores,
    )
    gaussians.validate(str(path))

    norms = np.linalg.norm(gaussians.quats, axis=1)
    if (np.abs(norms - 1.0) > ROTATION_TOLERANCE).any():
        logger.debug(f"Renormalizing {(np.abs(norms - 1.0) > ROTATION_TOLERANCE).sum()} quaternions")
        gaussians.normalize_rotations()
    return gaussians


# ==================== Cameras ====================


def _format_float(value: float) -> str:
    return repr(float(value))


def write_cameras(views: list[View], path: Path) -> None:
    """Write one camera per line."""
    lines = []
    for view in views:
        cam = view.camera
        fields = [
            str(view.camera_id),
            *(_format_float(v) for v in (cam.fx, cam.fy, cam.cx, cam.cy)),
            str(cam.width),
            str(cam.height),
            _format_float(cam.near),
            _format_float(cam.far),
            *(_format_float(v) for v in cam.extrinsic_rows()),
        ]
        lines.append(" ".join(fields))
    path.write_text("\n".join(lines) + "\n")


def read_cameras(path: Path) -> list[tuple[int, Camera]]:
    """Parse cameras.txt into (id, Camera) pairs."""
    if not path.exists():
        raise SceneParseError("file not found", str(path))
    cameras = []
    for index, line in enumerate(path.read_text().splitlines()):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 21:
            raise SceneParseError(f"expected 21 fields, got {len(parts)}", str(path), index)
        try:
            cam_id = int(parts[0])
            fx, fy, cx, cy = (float(v) for v in parts[1:5])
            width, height = int(parts[5]), int(parts[6])
            near, far = float(parts[7]), float(parts[8])
            extrinsic = np.array([float(v) for v in parts[9:21]]).reshape(3, 4)
        except ValueError as e:
            raise SceneParseError(f"malformed record: {e}", str(path), index) from e
        camera = Camera(fx, fy, cx, cy, extrinsic[:, :3], extrinsic[:, 3], width, height, near, far)
        errors = camera.validate()
        if errors:
            raise SceneParseError("; ".join(errors), str(path), index)
        cameras.append((cam_id, camera))
    return cameras


# ==================== Images ====================


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] image to 8 bits."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    """Round a [0, 1] image to the nearest 1/255 step."""
    return to_uint8(image).astype(np.float64) / 255.0


def write_image(image: np.ndarray, path: Path) -> None:
    """Write an (H, W, 3) or (H, W) [0, 1] image; format follows the suffix (.ppm, .png)."""
    data = to_uint8(image)
    mode = "RGB" if data.ndim == 3 else "L"
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    if fmt == "PPM" and mode == "L":
        data = np.repeat(data[:, :, None], 3, axis=2)
        mode = "RGB"
    try:
        Image.fromarray(data, mode=mode).save(path, format=fmt)
    except OSError as e:
        raise SceneWriteError(f"cannot write {path}: {e}", str(path)) from e


def read_image(path: Path) -> np.ndarray:
    """Read an image as float64 RGB in [0, 1]."""
    if not path.exists():
        raise SceneParseError("file not found", str(path))
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
    except Exception as e:
        raise SceneParseError(f"malformed image: {e}", str(path)) from e
    return data / 255.0


def write_depth(depth: np.ndarray, path: Path) -> None:
    """Write a depth map with the 16-byte DPTH header followed by float32 data."""
    height, width = depth.shape
    header = DEPTH_MAGIC + struct.pack("<III", width, height, DEPTH_VERSION)
    path.write_bytes(header + depth.astype("<f4").tobytes())


def read_depth(path: Path) -> np.ndarray:
    """Read a depth map written by write_depth."""
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != DEPTH_MAGIC:
        raise SceneParseError("not a DPTH file", str(path))
    width, height, _version = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != width * height:
        raise SceneParseError(f"expected {width * height} depth values, got {data.size}", str(path))
    return data.reshape(height, width).astype(np.float64)


# ==================== Scene metadata ====================


def write_scene_config(metadata: dict[str, Any], path: Path) -> None:
    """Write metadata as sorted key = value lines."""
    lines = []
    for key in sorted(metadata):
        value = yaml.safe_dump(metadata[key], default_flow_style=True).strip()
        value = value.removesuffix("...").strip()
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_scene_config(path: Path) -> dict[str, Any]:
    """Parse key = value lines; values are typed with YAML scalar rules."""
    metadata: dict[str, Any] = {}
    if not path.exists():
        return metadata
    for index, line in enumerate(path.read_text().splitlines()):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SceneParseError("expected key = value", str(path), index)
        key, value = (part.strip() for part in stripped.split("=", 1))
        try:
            metadata[key] = yaml.safe_load(value) if value else None
        except yaml.YAMLError as e:
            raise SceneParseError(f"bad value for {key}: {e}", str(path), index) from e
    return metadata


def write_floater_flags(flags: np.ndarray, path: Path) -> None:
    """Write indices of flagged Gaussians, one per line."""
    indices = np.flatnonzero(flags)
    path.write_text("".join(f"{i}\n" for i in indices))


def read_floater_flags(path: Path, count: int) -> np.ndarray:
    """Read a floater index list into a boolean mask of length `count`."""
    flags = np.zeros(count, dtype=bool)
    for index, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            i = int(line)
        except ValueError as e:
            raise SceneParseError(f"bad index {line!r}", str(path), index) from e
        if not 0 <= i < count:
            raise SceneParseError(f"index {i} out of range", str(path), index)
        flags[i] = True
    return flags


# ==================== Scene ====================


def _load_views(root: Path) -> list[View]:
    cameras_path = root / CAMERAS_NAME
    if not cameras_path.exists():
        return []
    views = []
    for cam_id, camera in read_cameras(cameras_path):
        image_path = root / IMAGES_DIR / f"{cam_id}.ppm"
        image = read_image(image_path)
        if image.shape != (camera.height, camera.width, 3):
            raise SceneParseError(
                f"image {image.shape[:2]} does not match camera {camera.height}x{camera.width}",
                str(image_path),
            )
        views.append(View(cam_id, camera, image))
    return views


def load_scene(path: str | Path) -> Scene:
    """
    Load a scene directory.

    Args:
        path: Scene directory

    Returns:
        Scene with validated Gaussians and views

    Raises:
        SceneParseError: missing file, malformed record or non-finite value
        EmptySceneError: the PLY holds no Gaussians
    """
    root = Path(path)
    if not root.is_dir():
        raise SceneParseError("scene directory not found", str(root))
    gaussians = read_ply(root / PLY_NAME)
    if not (root / CAMERAS_NAME).exists():
        raise SceneParseError("file not found", str(root / CAMERAS_NAME))
    scene = Scene(
        gaussians=gaussians,
        train_views=_load_views(root),
        test_views=_load_views(root / TEST_DIR),
        metadata=read_scene_config(root / SCENE_CONFIG_NAME),
    )
    errors = scene.validate()
    if errors:
        raise SceneParseError("; ".join(errors), str(root))
    logger.info(
        f"Loaded scene {root}: {len(gaussians)} gaussians, "
        f"{len(scene.train_views)} train / {len(scene.test_views)} test views"
    )
    return scene


def _save_views(views: list[View], root: Path) -> None:
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    write_cameras(views, root / CAMERAS_NAME)
    for view in views:
        write_image(view.image, root / IMAGES_DIR / f"{view.camera_id}.ppm")


def save_scene(scene: Scene, path: str | Path) -> None:
    """
    Write a scene directory; identical scenes produce identical bytes.

    Raises:
        SceneWriteError: unwritable path or non-finite values
    """
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SceneWriteError(f"cannot create {root}: {e}", str(root)) from e
    write_ply(scene.gaussians, root / PLY_NAME)
    try:
        _save_views(scene.train_views, root)
        if scene.test_views:
            _save_views(scene.test_views, root / TEST_DIR)
        write_scene_config(scene.metadata, root / SCENE_CONFIG_NAME)
    except OSError as e:
        raise SceneWriteError(f"cannot write scene to {root}: {e}", str(root)) from e
    logger.debug(f"Saved scene to {root}")
