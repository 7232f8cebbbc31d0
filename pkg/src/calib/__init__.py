"""
Reliability calibration: depth-guided dropout and dark-channel pruning.
"""

from .cdgd import (
    DropoutPlan,
    continuous_weight,
    depth_importance,
    dropout_probability,
    global_median_depth,
    iteration_seed,
    make_plan,
    piecewise_probability,
    resolve_tau,
    sample_mask,
)
from .dcp import (
    DcpReport,
    PruneDecision,
    accumulate,
    analyze_image,
    anomaly_mask,
    calibrate_thresholds,
    dark_channel,
    dark_channel_residual,
    local_average,
    prune,
    prune_candidates,
)

__all__ = [
    # Depth-guided dropout
    "DropoutPlan",
    "depth_importance",
    "piecewise_probability",
    "continuous_weight",
    "dropout_probability",
    "iteration_seed",
    "sample_mask",
    "resolve_tau",
    "global_median_depth",
    "make_plan",
    # Dark-channel pruning
    "DcpReport",
    "PruneDecision",
    "dark_channel",
    "dark_channel_residual",
    "local_average",
    "anomaly_mask",
    "analyze_image",
    "calibrate_thresholds",
    "accumulate",
    "prune_candidates",
    "prune",
]
