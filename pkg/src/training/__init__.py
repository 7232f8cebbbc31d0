"""
Optimization loop, densification and run bookkeeping.
"""

from .densify import DensifyResult, accumulate_gradients, densify, split_children
from .state import (
    EVENTS_NAME,
    REPORT_NAME,
    VIOLATION_TRACE_NAME,
    ReportRow,
    TrainReport,
    TrainState,
    pruning_efficacy,
    read_events,
    read_report,
)
from .trainer import Trainer, checkpoint_dir, evaluate, save_checkpoint, train, write_outputs

__all__ = [
    # State
    "TrainState",
    "ReportRow",
    "TrainReport",
    "pruning_efficacy",
    "read_events",
    "read_report",
    "EVENTS_NAME",
    "REPORT_NAME",
    "VIOLATION_TRACE_NAME",
    # Densification
    "DensifyResult",
    "accumulate_gradients",
    "split_children",
    "densify",
    # Loop
    "Trainer",
    "train",
    "evaluate",
    "checkpoint_dir",
    "save_checkpoint",
    "write_outputs",
]
