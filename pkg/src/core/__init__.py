"""
Core scene types, persistence and exceptions shared by every other package.
"""

from .exceptions import (
    ConfigValidationError,
    EmptySceneError,
    ImageTooSmallError,
    NoFloaterCoverageError,
    NoVisibleGaussiansError,
    SceneParseError,
    SceneWriteError,
    ScheduleError,
    ShapeMismatchError,
    SplatcalError,
    ThresholdOrderError,
    WindowSizeError,
)
from .io import load_scene, save_scene
from .models import (
    Camera,
    GaussianPrimitive,
    GaussianSet,
    Scene,
    View,
    logit,
    quat_to_rotmat,
    sigmoid,
)

__all__ = [
    # Exceptions
    "SplatcalError",
    "SceneParseError",
    "SceneWriteError",
    "EmptySceneError",
    "ConfigValidationError",
    "ShapeMismatchError",
    "ImageTooSmallError",
    "NoVisibleGaussiansError",
    "NoFloaterCoverageError",
    "WindowSizeError",
    "ThresholdOrderError",
    "ScheduleError",
    # Models
    "Camera",
    "GaussianPrimitive",
    "GaussianSet",
    "Scene",
    "View",
    "sigmoid",
    "logit",
    "quat_to_rotmat",
    # Persistence
    "load_scene",
    "save_scene",
]
