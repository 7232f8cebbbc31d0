"""
Differentiation and optimization: photometric loss, analytic backward pass, Adam.
"""

from .adam import (
    OPTIMIZER_NAME,
    OptimizerState,
    adam_update,
    exponential_lr,
    load_optimizer,
    save_optimizer,
)
from .backward import GaussianGradients, backward, render_backward
from .loss import l1, loss, loss_and_grad

__all__ = [
    # Loss
    "l1",
    "loss",
    "loss_and_grad",
    # Backward
    "GaussianGradients",
    "backward",
    "render_backward",
    # Optimizer
    "OPTIMIZER_NAME",
    "OptimizerState",
    "adam_update",
    "exponential_lr",
    "save_optimizer",
    "load_optimizer",
]
