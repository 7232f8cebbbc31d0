"""
Image quality metrics shared by the loss and evaluation.
"""

from .quality import (
    PSNR_SENTINEL,
    MetricRow,
    evaluate_pair,
    gaussian_window,
    mean_row,
    psnr,
    ssim,
    ssim_with_grad,
)

__all__ = [
    "PSNR_SENTINEL",
    "MetricRow",
    "psnr",
    "ssim",
    "ssim_with_grad",
    "evaluate_pair",
    "mean_row",
    "gaussian_window",
]
