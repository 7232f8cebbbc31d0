"""
Training loop.

Each iteration trains on one view (round-robin): dropout plan, masked render,
loss and backward, dark-channel monitoring on the clean render, optimizer step,
then the densification and pruning schedules.
"""

import logging
from pathlib import Path

import numpy as np

from src.calib.cdgd import global_median_depth, iteration_seed, make_plan
from src.calib.dcp import accumulate, analyze_image, prune
from src.config import Ablation, CalibConfig, Config, DropoutMode
from src.core.exceptions import EmptySceneError
from src.core.io import write_ply
from src.core.models import GaussianSet, Scene, View
from src.metrics.quality import MetricRow, evaluate_pair, mean_row
from src.optim.adam import OPTIMIZER_NAME, save_optimizer
from src.optim.backward import render_backward
from src.optim.loss import loss_and_grad
from src.render.projection import project
from src.render.rasterizer import render

from .densify import accumulate_gradients, densify
from .state import EVENTS_NAME, REPORT_NAME, VIOLATION_TRACE_NAME, ReportRow, TrainReport, TrainState

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"


def _render_kwargs(calib: CalibConfig, threads: int) -> dict:
    return {
        "low_pass": calib.low_pass,
        "extent_sigma": calib.splat_extent_sigma,
        "vis_epsilon": calib.vis_epsilon,
        "threads": threads,
    }


def evaluate(
    state: TrainState | GaussianSet,
    test_views: list[View],
    calib: CalibConfig | None = None,
    threads: int = 1,
) -> list[MetricRow]:
    """
    PSNR and SSIM of clean renders against each view, plus a mean row.

    Dropout never applies here.
    """
    gaussians = state.gaussians if isinstance(state, TrainState) else state
    calib = calib or CalibConfig()
    if not test_views:
        raise ValueError("evaluation needs at least one view")
    rows = []
    for view in test_views:
        out = render(gaussians, view.camera, **_render_kwargs(calib, threads))
        rows.append(evaluate_pair(str(view.camera_id), np.clip(out.color, 0.0, 1.0), view.image))
    rows.append(mean_row(rows))
    return rows


def checkpoint_dir(out_dir: Path, iteration: int) -> Path:
    return Path(out_dir) / CHECKPOINT_DIR / f"iter_{iteration:06d}"


def save_checkpoint(state: TrainState, out_dir: Path) -> Path:
    """Write gaussians.ply and optimizer.bin for the current iteration."""
    target = checkpoint_dir(out_dir, state.iteration)
    target.mkdir(parents=True, exist_ok=True)
    write_ply(state.gaussians, target / "gaussians.ply")
    save_optimizer(state.optimizer, target / OPTIMIZER_NAME)
    logger.info(f"Checkpoint written to {target}")
    return target


class Trainer:
    """
    Runs one training job.

    Example usage:
        trainer = Trainer(scene, config, Ablation.CDGD_DCP_GP, seed=7)
        state, report = trainer.run(out_dir)
    """

    def __init__(
        self,
        scene: Scene,
        config: Config,
        ablation: Ablation | str = Ablation.BASELINE,
        seed: int | None = None,
        dropout: DropoutMode | str | None = None,
    ):
        """
        Initialize the trainer.

        Args:
            scene: Scene with at least one training view
            config: Resolved configuration
            ablation: Preset selecting dropout mode and pruning
            seed: Run seed (defaults to config.runtime.seed)
            dropout: Dropout mode overriding the preset's own
        """
        if not scene.train_views:
            raise ValueError("training needs at least one training view")
        self.scene = scene
        self.config = config
        self.calib = config.calib
        self.ablation = Ablation(ablation)
        self.seed = config.runtime.seed if seed is None else seed
        self.threads = config.runtime.threads
        self.extent = scene.extent()
        self.dropout_mode = DropoutMode(dropout) if dropout is not None else self.ablation.dropout_mode
        self.prune_enabled = self.ablation.prune_enabled
        self.monitor = self.calib.dcp_monitor or self.prune_enabled
        self.eval_views = scene.test_views or scene.train_views
        self._global_tau: float | None = None

    # ==================== Per-iteration steps ====================

    def _refresh_global_tau(self, state: TrainState) -> None:
        if self.calib.global_tau and self.dropout_mode == DropoutMode.CDGD:
            self._global_tau = global_median_depth(state.gaussians, self.scene.cameras)

    def _dropout(self, state: TrainState, view: View) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Mask and opacity scale for this iteration (None when dropout is inactive)."""
        end = self.calib.dropout_end_iter
        if self.dropout_mode == DropoutMode.OFF or (end is not None and state.iteration > end):
            return None, None
        proj = project(
            state.gaussians, view.camera, low_pass=self.calib.low_pass, extent_sigma=self.calib.splat_extent_sigma
        )
        plan = make_plan(
            proj,
            len(state.gaussians),
            self.calib,
            self.dropout_mode,
            iteration_seed(self.seed, state.iteration),
            global_tau=self._global_tau,
        )
        scale = plan.opacity_scale() if self.calib.dropout_rescale else None
        return plan.mask, scale

    def _monitor(self, state: TrainState, view: View, clean, report: TrainReport) -> float:
        dcp = analyze_image(np.clip(clean.color, 0.0, 1.0), self.calib.tau1, self.calib.tau2, self.calib.dcp_window)
        accumulate(state, dcp, clean.contributions.visible(self.calib.vis_epsilon), self.calib)
        report.violation_trace.append((state.iteration, view.camera_id, dcp.violation_ratio))
        return dcp.violation_ratio

    def _report_row(self, state: TrainState, losses: list[float], ratios: list[float]) -> ReportRow:
        if self.config.runtime.test_eval:
            mean = evaluate(state, self.eval_views, self.calib, self.threads)[-1]
            psnr, ssim = mean.psnr, mean.ssim
        else:
            psnr, ssim = 0.0, 0.0
        return ReportRow(
            iteration=state.iteration,
            train_loss=float(np.mean(losses)) if losses else 0.0,
            test_psnr=psnr,
            test_ssim=ssim,
            gaussian_count=len(state.gaussians),
            pruned_total=state.event_total("prune"),
            mean_dcp_score=float(state.gaussians.dcp_scores.mean()),
            violation_ratio=float(np.mean(ratios)) if ratios else 0.0,
        )

    # ==================== Loop ====================

    def run(self, out_dir: str | Path | None = None) -> tuple[TrainState, TrainReport]:
        """
        Train for calib.total_iters iterations.

        Args:
            out_dir: Directory for checkpoints, events and report (optional)

        Returns:
            (final TrainState, TrainReport)

        Raises:
            EmptySceneError: the Gaussian count reaches zero
        """
        calib, runtime = self.calib, self.config.runtime
        out_dir = Path(out_dir) if out_dir is not None else None
        state = TrainState.create(self.scene.gaussians, calib, seed=self.seed, extent=self.extent)
        report = TrainReport()
        kwargs = _render_kwargs(calib, self.threads)
        views = self.scene.train_views
        self._refresh_global_tau(state)

        logger.info(
            f"Training {calib.total_iters} iterations, ablation={self.ablation.value}, seed={self.seed}, "
            f"{len(state.gaussians)} gaussians, {len(views)} views"
        )

        losses: list[float] = []
        ratios: list[float] = []
        for it in range(1, calib.total_iters + 1):
            state.iteration = it
            view = views[(it - 1) % len(views)]

            mask, opacity_scale = self._dropout(state, view)
            out = render(state.gaussians, view.camera, mask=mask, opacity_scale=opacity_scale, **kwargs)
            loss_value, grad_image = loss_and_grad(out.color, view.image, calib.lambda1)
            grads = render_backward(out, state.gaussians, view.camera, grad_image, threads=self.threads)
            losses.append(loss_value)

            if self.monitor and it >= calib.t_start:
                clean = out if mask is None and opacity_scale is None else render(state.gaussians, view.camera, **kwargs)
                ratios.append(self._monitor(state, view, clean, report))

            if it <= calib.densify_until_iter:
                accumulate_gradients(state, grads)
            state.optimizer.step(grads, state.gaussians)

            structure_changed = False
            if (
                calib.densify_from_iter <= it <= calib.densify_until_iter
                and it % calib.densify_interval == 0
            ):
                structure_changed |= densify(state, calib, self.extent).changed

            if self.prune_enabled and it >= calib.t_start and it % calib.t_prune == 0:
                structure_changed |= bool(prune(state, calib).pruned_indices)

            if len(state.gaussians) == 0:
                raise EmptySceneError(f"gaussian count reached 0 at iteration {it}")
            if structure_changed:
                self._refresh_global_tau(state)

            if it % runtime.log_interval == 0 or it == calib.total_iters:
                row = self._report_row(state, losses, ratios)
                report.add(row)
                logger.info(
                    f"[{it}/{calib.total_iters}] loss={row.train_loss:.5f} psnr={row.test_psnr:.2f} "
                    f"count={row.gaussian_count} pruned={row.pruned_total} r_dcp={row.violation_ratio:.3f}"
                )
                losses, ratios = [], []
            else:
                logger.debug(f"[{it}] loss={loss_value:.6f} count={len(state.gaussians)}")

            if out_dir is not None and runtime.checkpoint_interval and it % runtime.checkpoint_interval == 0:
                save_checkpoint(state, out_dir)

        if not state.reconcile():
            logger.warning("Gaussian count does not match the event log")
        if state.optimizer.skipped_nonfinite:
            logger.warning(f"Optimizer skipped {state.optimizer.skipped_nonfinite} non-finite gaussian updates")

        if out_dir is not None:
            write_outputs(state, report, out_dir)
        return state, report


def write_outputs(state: TrainState, report: TrainReport, out_dir: Path) -> None:
    """Final model, event log, report and violation trace."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ply(state.gaussians, out_dir / "gaussians.ply")
    state.write_events(out_dir / EVENTS_NAME)
    report.write_csv(out_dir / REPORT_NAME)
    report.write_violation_trace(out_dir / VIOLATION_TRACE_NAME)


def train(
    scene: Scene,
    config: Config,
    ablation: Ablation | str = Ablation.BASELINE,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    dropout: DropoutMode | str | None = None,
) -> tuple[TrainState, TrainReport]:
    """Train a scene under one ablation preset; see Trainer.run."""
    return Trainer(scene, config, ablation, seed, dropout).run(out_dir)
