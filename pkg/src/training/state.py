"""
Training state, event log and per-interval report.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from src.calib.dcp import PruneDecision
from src.core.models import GaussianSet
from src.optim.adam import OptimizerState

logger = logging.getLogger(__name__)

EVENTS_NAME = "events.jsonl"
REPORT_NAME = "report.csv"
VIOLATION_TRACE_NAME = "violation_trace.csv"


@dataclass
class TrainState:
    """
    Mutable state of one training run.

    Per-Gaussian arrays (accumulators, lineage) stay row-aligned with
    `gaussians` through every prune, cull and densify.
    """

    gaussians: GaussianSet
    optimizer: OptimizerState
    seed: int = 0
    iteration: int = 0
    grad_accum: np.ndarray = None  # summed densification signal
    grad_count: np.ndarray = None  # iterations with the Gaussian in view
    lineage: np.ndarray = None  # index of the initial ancestor
    initial_count: int = 0
    events: list[dict[str, Any]] = field(default_factory=list)
    prune_decisions: list[PruneDecision] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.gaussians)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)
        if self.lineage is None:
            self.lineage = np.arange(n, dtype=np.int64)
        if not self.initial_count:
            self.initial_count = n

    @classmethod
    def create(cls, gaussians: GaussianSet, config, seed: int = 0, extent: float = 1.0) -> "TrainState":
        """Fresh state over a copy of `gaussians`."""
        gaussians = gaussians.copy()
        return cls(gaussians=gaussians, optimizer=OptimizerState.create(len(gaussians), config, extent), seed=seed)

    def __len__(self) -> int:
        return len(self.gaussians)

    # ==================== Row bookkeeping ====================

    def remove(self, keep: np.ndarray) -> None:
        """Keep only the rows flagged True, in every per-Gaussian array."""
        self.gaussians = self.gaussians.subset(keep)
        self.optimizer.keep(keep)
        self.grad_accum = self.grad_accum[keep]
        self.grad_count = self.grad_count[keep]
        self.lineage = self.lineage[keep]

    def append(self, new: GaussianSet, parents: np.ndarray) -> None:
        """Append Gaussians derived from existing rows `parents` (indices before appending)."""
        self.lineage = np.concatenate([self.lineage, self.lineage[parents]])
        self.gaussians = self.gaussians.concat(new)
        self.optimizer.append(len(new))
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(len(new))])
        self.grad_count = np.concatenate([self.grad_count, np.zeros(len(new), dtype=np.int64)])

    def reset_accumulators(self) -> None:
        self.grad_accum[:] = 0.0
        self.grad_count[:] = 0

    # ==================== Events ====================

    def log_event(self, kind: str, **data: Any) -> dict[str, Any]:
        """Append an event stamped with the current iteration."""
        event = {"kind": kind, "iteration": self.iteration, **data}
        self.events.append(event)
        return event

    def record_prune(self, decision: PruneDecision) -> None:
        self.prune_decisions.append(decision)
        data = decision.to_dict()
        data.pop("iteration")
        self.log_event("prune", count=len(decision.pruned_indices), **data)

    def event_total(self, kind: str) -> int:
        """Sum of `count` over events of one kind."""
        return sum(int(e.get("count", 0)) for e in self.events if e["kind"] == kind)

    def reconcile(self) -> bool:
        """
        Check count = initial + clones + splits - pruned - culled.

        Returns:
            True when the event log explains the current Gaussian count
        """
        expected = (
            self.initial_count
            + self.event_total("clone")
            + self.event_total("split")
            - self.event_total("prune")
            - self.event_total("cull")
        )
        if expected != len(self.gaussians):
            logger.error(f"Gaussian count {len(self.gaussians)} does not reconcile with event log ({expected})")
            return False
        return True

    def write_events(self, path: str | Path) -> None:
        """One JSON object per line, keys sorted."""
        with open(path, "w", encoding="utf-8") as f:
            for event in self.events:
                f.write(json.dumps(event, sort_keys=True) + "\n")


def read_events(path: str | Path) -> list[dict[str, Any]]:
    """Parse an events.jsonl file."""
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def pruning_efficacy(state: TrainState, floater_flags: np.ndarray) -> dict[str, float]:
    """
    Fractions of planted floaters and of surface Gaussians removed by DCP pruning.

    A lineage counts as removed when one of its members was pruned and none
    survives.

    Args:
        state: Finished training state
        floater_flags: Flags over the initial Gaussian set

    Returns:
        Dict with floaters_removed, surface_removed and totals
    """
    flags = np.asarray(floater_flags, dtype=bool)
    pruned = set()
    for decision in state.prune_decisions:
        pruned.update(decision.pruned_lineage)
    alive = set(state.lineage.tolist())
    removed = np.array([i in pruned and i not in alive for i in range(flags.size)], dtype=bool)
    n_float = int(flags.sum())
    n_surf = int((~flags).sum())
    return {
        "floaters_total": n_float,
        "surface_total": n_surf,
        "floaters_removed": float(removed[flags].sum() / n_float) if n_float else 0.0,
        "surface_removed": float(removed[~flags].sum() / n_surf) if n_surf else 0.0,
    }


# ==================== Report ====================


@dataclass
class ReportRow:
    """Metrics at one logging interval."""

    iteration: int
    train_loss: float
    test_psnr: float
    test_ssim: float
    gaussian_count: int
    pruned_total: int
    mean_dcp_score: float
    violation_ratio: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


@dataclass
class TrainReport:
    """Per-interval rows plus the per-iteration violation-ratio trace."""

    rows: list[ReportRow] = field(default_factory=list)
    violation_trace: list[tuple[int, int, float]] = field(default_factory=list)

    def add(self, row: ReportRow) -> None:
        if not row.is_finite():
            logger.warning(f"Non-finite report row at iteration {row.iteration}: {row}")
        self.rows.append(row)

    @property
    def final(self) -> ReportRow | None:
        return self.rows[-1] if self.rows else None

    def write_csv(self, path: str | Path) -> None:
        """Report rows with repr-precision floats."""
        names = list(ReportRow.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(names)
            for row in self.rows:
                writer.writerow([_fmt(getattr(row, n)) for n in names])

    def write_violation_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["iteration", "camera_id", "violation_ratio"])
            for it, cam, ratio in self.violation_trace:
                writer.writerow([it, cam, _fmt(ratio)])


def _fmt(value: Any) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def read_report(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
