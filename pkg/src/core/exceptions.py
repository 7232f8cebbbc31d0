"""
Exceptions for scene handling, configuration, rendering and calibration.
"""


class SplatcalError(Exception):
    """Base exception for all splatcal errors."""

    pass


class SceneParseError(SplatcalError):
    """Raised when a scene directory cannot be read."""

    def __init__(self, message: str, file: str = "", record_index: int | None = None):
        self.file = file
        self.record_index = record_index
        location = file
        if record_index is not None:
            location = f"{file}[{record_index}]"
        super().__init__(f"{location}: {message}" if location else message)


class SceneWriteError(SplatcalError):
    """Raised when a scene cannot be written."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(message)


class EmptySceneError(SplatcalError):
    """Raised when a Gaussian set is (or would become) empty."""

    def __init__(self, message: str = "empty gaussian set"):
        super().__init__(message)


class ConfigValidationError(SplatcalError):
    """Raised when a configuration field is out of range or unknown."""

    def __init__(self, message: str, field_name: str = ""):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}" if field_name else message)


class ShapeMismatchError(SplatcalError, ValueError):
    """Raised when two images that must match in shape do not."""

    def __init__(self, shape_a: tuple, shape_b: tuple):
        self.shape_a = shape_a
        self.shape_b = shape_b
        super().__init__(f"shape mismatch: {shape_a} vs {shape_b}")


class ImageTooSmallError(SplatcalError, ValueError):
    """Raised when an image is smaller than the SSIM window."""

    def __init__(self, shape: tuple, window: int):
        self.shape = shape
        self.window = window
        super().__init__(f"image {shape[:2]} smaller than {window}x{window} window")


class NoVisibleGaussiansError(SplatcalError):
    """Raised when every Gaussian is culled for a camera."""

    def __init__(self, message: str = "no visible gaussians"):
        super().__init__(message)


class NoFloaterCoverageError(SplatcalError):
    """Raised when no pixel is touched by a flagged floater."""

    def __init__(self, message: str = "no floater coverage"):
        super().__init__(message)


class WindowSizeError(SplatcalError, ValueError):
    """Raised for an even or oversize local-average window."""

    def __init__(self, window: int, reason: str = "window must be odd"):
        self.window = window
        super().__init__(f"{reason} (got {window})")


class ThresholdOrderError(SplatcalError, ValueError):
    """Raised when DDGS depth thresholds are not strictly ordered."""

    def __init__(self, d_near: float, d_middle: float):
        self.d_near = d_near
        self.d_middle = d_middle
        super().__init__(f"require 0 < d_near < d_middle (got {d_near}, {d_middle})")


class ScheduleError(SplatcalError):
    """Raised when a scheduled operation runs at the wrong iteration."""

    def __init__(self, message: str, iteration: int = 0):
        self.iteration = iteration
        super().__init__(message)
