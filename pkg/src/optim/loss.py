"""
Photometric training loss: mean absolute error plus a weighted SSIM term.
"""

import numpy as np

from src.metrics.quality import check_shapes, ssim, ssim_with_grad


def l1(render: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error over all pixels and channels."""
    check_shapes(render, gt)
    return float(np.mean(np.abs(np.asarray(render, dtype=np.float64) - gt)))


def loss(render: np.ndarray, gt: np.ndarray, lambda1: float) -> float:
    """
    L = mean|render - gt| + lambda1 * (1 - SSIM(render, gt)).

    Raises:
        ShapeMismatchError: images differ in shape
    """
    value = l1(render, gt)
    if lambda1:
        value += lambda1 * (1.0 - ssim(render, gt))
    return value


def loss_and_grad(render: np.ndarray, gt: np.ndarray, lambda1: float) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the rendered image."""
    check_shapes(render, gt)
    render = np.asarray(render, dtype=np.float64)
    diff = render - gt
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    if lambda1:
        s, ds = ssim_with_grad(render, gt)
        value += lambda1 * (1.0 - s)
        grad = grad - lambda1 * ds
    return value, grad
