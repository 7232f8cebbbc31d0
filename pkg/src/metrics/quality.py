"""
Image quality metrics.

PSNR and SSIM shared by the training loss and evaluation reporting. SSIM
uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, computed
per channel over the valid region (no padding) and averaged.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d, correlate2d

from src.core.exceptions import ImageTooSmallError, ShapeMismatchError

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class MetricRow:
    """Quality of one rendered view against its ground truth."""

    view_id: str
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        return {"view_id": self.view_id, "psnr": self.psnr, "ssim": self.ssim}


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian window."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = gaussian_window()


def _as_channels(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image[:, :, None] if image.ndim == 2 else image


def check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    """Raise ShapeMismatchError unless shapes agree."""
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(np.shape(a), np.shape(b))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in dB for [0, 1] images.

    Returns the 99 dB sentinel when the images are identical.
    """
    check_shapes(a, b)
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 10.0 * np.log10(1.0 / mse))


def _ssim_terms(x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Windowed moments and the SSIM map of one channel."""
    mu_x = correlate2d(x, _WINDOW, mode="valid")
    mu_y = correlate2d(y, _WINDOW, mode="valid")
    e_xx = correlate2d(x * x, _WINDOW, mode="valid")
    e_yy = correlate2d(y * y, _WINDOW, mode="valid")
    e_xy = correlate2d(x * y, _WINDOW, mode="valid")
    sigma_x = e_xx - mu_x * mu_x
    sigma_y = e_yy - mu_y * mu_y
    sigma_xy = e_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * sigma_xy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sigma_x + sigma_y + SSIM_C2
    return {
        "mu_x": mu_x,
        "mu_y": mu_y,
        "a1": a1,
        "a2": a2,
        "b1": b1,
        "b2": b2,
        "map": (a1 * a2) / (b1 * b2),
    }


def _check_ssim_input(a: np.ndarray, b: np.ndarray) -> None:
    check_shapes(a, b)
    if min(np.shape(a)[:2]) < SSIM_WINDOW:
        raise ImageTooSmallError(np.shape(a), SSIM_WINDOW)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over all valid windows and channels."""
    _check_ssim_input(a, b)
    a, b = _as_channels(a), _as_channels(b)
    maps = [_ssim_terms(a[:, :, c], b[:, :, c])["map"] for c in range(a.shape[2])]
    return float(np.mean(maps))


def ssim_with_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """
    SSIM(x, y) and its gradient with respect to x.

    Each window statistic is a valid correlation of x (or x*x, x*y) with the
    window, so the adjoint is a full convolution of the upstream map.
    """
    _check_ssim_input(x, y)
    squeeze = np.ndim(x) == 2
    x, y = _as_channels(x), _as_channels(y)
    channels = x.shape[2]
    grad = np.zeros_like(x)
    total = 0.0
    n_valid = None
    for c in range(channels):
        xc, yc = x[:, :, c], y[:, :, c]
        t = _ssim_terms(xc, yc)
        s = t["map"]
        n_valid = s.size
        total += float(s.sum())
        denom = t["b1"] * t["b2"]
        d_mu_x = 2.0 * t["mu_y"] * (t["a2"] - t["a1"]) / denom - 2.0 * t["mu_x"] * s * (
            1.0 / t["b1"] - 1.0 / t["b2"]
        )
        d_e_xx = -s / t["b2"]
        d_e_xy = 2.0 * t["a1"] / denom
        grad[:, :, c] = (
            convolve2d(d_mu_x, _WINDOW, mode="full")
            + 2.0 * xc * convolve2d(d_e_xx, _WINDOW, mode="full")
            + yc * convolve2d(d_e_xy, _WINDOW, mode="full")
        )
    scale = 1.0 / (n_valid * channels)
    grad *= scale
    value = total * scale
    return value, (grad[:, :, 0] if squeeze else grad)


def evaluate_pair(view_id: str, rendered: np.ndarray, ground_truth: np.ndarray) -> MetricRow:
    """PSNR and SSIM of one image pair."""
    return MetricRow(view_id=str(view_id), psnr=psnr(rendered, ground_truth), ssim=ssim(rendered, ground_truth))


def mean_row(rows: list[MetricRow], view_id: str = "mean") -> MetricRow:
    """Arithmetic mean of metric rows."""
    return MetricRow(
        view_id=view_id,
        psnr=float(np.mean([r.psnr for r in rows])),
        ssim=float(np.mean([r.ssim for r in rows])),
    )
