"""
Command-line interface for splatcal.

Usage:
    splatcal gen-scene --template two-plane-box --out scenes/box
    splatcal inject-floaters --scene scenes/box --count 500 --out scenes/box_fl
    splatcal train --scene scenes/box_fl --ablation cdgd+dcp_gp --seed 7 --out runs/a
    splatcal render --scene scenes/box_fl --model runs/a/gaussians.ply --out renders
    splatcal analyze-dcp renders/floaters renders/clean --gt renders/gt --out dcp
    splatcal analyze-decompose --scene scenes/box_fl --out decomp
    splatcal calibrate-dcp --scene scenes/box_fl --iters 500 --out calib
    splatcal eval --rendered renders/a --gt renders/gt --out metrics

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

import argparse
import copy
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from src.calib.dcp import analyze_image, calibrate_thresholds, dark_channel_residual
from src.config import (
    Ablation,
    Config,
    DropoutMode,
    apply_overrides,
    load_config,
    setup_logging,
    write_resolved_config,
)
from src.core.exceptions import (
    ConfigValidationError,
    EmptySceneError,
    NoFloaterCoverageError,
    SceneParseError,
    ShapeMismatchError,
    ThresholdOrderError,
    WindowSizeError,
)
from src.core.io import (
    FLOATER_FLAGS_NAME,
    load_scene,
    read_floater_flags,
    read_image,
    read_ply,
    save_scene,
    write_depth,
    write_floater_flags,
    write_image,
)
from src.core.models import GaussianSet, Scene, View
from src.diagnostics.decomposition import dark_channel_approx_error, decompose, haze_approx_error
from src.metrics.quality import MetricRow, evaluate_pair, mean_row
from src.render.rasterizer import render
from src.runlog import RunLogger
from src.scenegen.floaters import FloaterSpec, inject_floaters
from src.scenegen.generator import SceneSpec, SceneTemplate, generate
from src.training.state import pruning_efficacy
from src.training.trainer import evaluate, train

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "config.resolved.yaml"
IMAGE_SUFFIXES = (".ppm", ".png")

# Errors caused by the caller's input rather than by a failed computation
INPUT_ERRORS = (
    ConfigValidationError,
    EmptySceneError,
    SceneParseError,
    ShapeMismatchError,
    ThresholdOrderError,
    WindowSizeError,
)

# Flag name -> (config section, field)
FLAG_FIELDS = {
    "lambda_base": ("calib", "lambda_base"),
    "kappa": ("calib", "kappa"),
    "tau1": ("calib", "tau1"),
    "tau2": ("calib", "tau2"),
    "alpha_min": ("calib", "alpha_min"),
    "eta": ("calib", "eta"),
    "t_prune": ("calib", "t_prune"),
    "t_start": ("calib", "t_start"),
    "iters": ("calib", "total_iters"),
    "threads": ("runtime", "threads"),
    "seed": ("runtime", "seed"),
    "log_level": ("logging", "level"),
}


class SplatcalArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with status 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ==================== Helpers ====================


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def write_metrics_csv(rows: list[MetricRow], path: Path) -> None:
    _write_csv(path, ["view_id", "psnr", "ssim"], [[r.view_id, r.psnr, r.ssim] for r in rows])


def _require_separate(source: str | Path, out: Path) -> None:
    """Refuse to write into an input directory."""
    if Path(source).resolve() == out.resolve():
        raise ConfigValidationError("output directory must differ from the input scene", "out")


def _load_flags(scene_dir: Path, flags_path: str | None, count: int, required: bool = False) -> np.ndarray | None:
    path = Path(flags_path) if flags_path else scene_dir / FLOATER_FLAGS_NAME
    if not path.exists():
        if required:
            raise SceneParseError("file not found", str(path))
        return None
    return read_floater_flags(path, count)


def _model(args: argparse.Namespace, scene: Scene) -> GaussianSet:
    return read_ply(Path(args.model)) if getattr(args, "model", None) else scene.gaussians


def _views(scene: Scene, split: str) -> list[View]:
    if split == "train":
        return scene.train_views
    if split == "test":
        return scene.test_views
    return scene.train_views + scene.test_views


def _image_paths(inputs: list[str]) -> list[Path]:
    paths = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            paths.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        elif path.exists():
            paths.append(path)
        else:
            raise SceneParseError("file not found", str(path))
    if not paths:
        raise ConfigValidationError("no images found", "images")
    return paths


def resolve_config(args: argparse.Namespace) -> Config:
    """
    Build the run configuration: defaults < --config file < --set overrides < flags.

    Raises:
        ConfigValidationError: unknown key or out-of-range value
    """
    config = load_config(args.config)
    apply_overrides(config, args.overrides or [])
    for flag, (section, name) in FLAG_FIELDS.items():
        # calibrate-dcp reads --iters as its warm-up length
        if flag == "iters" and args.command == "calibrate-dcp":
            continue
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(config, section), name, value)
    config.validate()
    return config


# ==================== Commands ====================


def cmd_gen_scene(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Generate a synthetic scene."""
    spec = SceneSpec(
        template=args.template,
        n_surface=args.n_surface,
        n_cameras=args.n_cameras,
        n_test=args.n_test,
        rig_radius=args.rig_radius,
        image_size=args.image_size,
        seed=config.runtime.seed,
    )
    scene = generate(spec, config.calib, threads=config.runtime.threads)
    save_scene(scene, out)
    print(f"Wrote {spec.template} scene with {len(scene.gaussians)} gaussians to {out}")
    return 0


def cmd_inject_floaters(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Append a floater field to a scene."""
    scene = load_scene(args.scene)
    fspec = FloaterSpec(
        count=args.count,
        opacity_range=(args.opacity_min, args.opacity_max),
        color_mean=tuple(args.color_mean),
        color_std=args.color_std,
    )
    injected, flags = inject_floaters(scene, fspec, seed=config.runtime.seed)
    save_scene(injected, out)
    write_floater_flags(flags, out / FLOATER_FLAGS_NAME)
    print(f"Injected {int(flags.sum())} floaters; scene written to {out}")
    return 0


def cmd_train(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Train a scene under an ablation preset."""
    scene = load_scene(args.scene)
    flags = _load_flags(Path(args.scene), args.flags, len(scene.gaussians))

    state, report = train(
        scene, config, ablation=args.ablation, seed=config.runtime.seed, out_dir=out, dropout=args.dropout
    )
    rows = evaluate(state, scene.test_views or scene.train_views, config.calib, config.runtime.threads)
    write_metrics_csv(rows, out / "metrics.csv")

    if flags is not None:
        efficacy = pruning_efficacy(state, flags)
        with open(out / "efficacy.yaml", "w") as f:
            yaml.safe_dump(efficacy, f, sort_keys=True)
        logger.info(
            f"Pruning removed {efficacy['floaters_removed']:.1%} of floaters, "
            f"{efficacy['surface_removed']:.1%} of surface gaussians"
        )

    final = rows[-1]
    print(
        f"Trained {config.calib.total_iters} iterations ({args.ablation}): "
        f"{len(state.gaussians)} gaussians, PSNR {final.psnr:.2f} dB, SSIM {final.ssim:.4f}"
    )
    return 0


def cmd_render(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Render a model from the scene's cameras."""
    scene = load_scene(args.scene)
    gaussians = _model(args, scene)
    target = out / "renders"
    target.mkdir(parents=True, exist_ok=True)
    calib = config.calib
    for view in _views(scene, args.split):
        result = render(
            gaussians,
            view.camera,
            low_pass=calib.low_pass,
            extent_sigma=calib.splat_extent_sigma,
            vis_epsilon=calib.vis_epsilon,
            threads=config.runtime.threads,
        )
        write_image(np.clip(result.color, 0.0, 1.0), target / f"{view.camera_id}.png")
        write_image(np.clip(result.color, 0.0, 1.0), target / f"{view.camera_id}.ppm")
        write_depth(result.depth_map, target / f"{view.camera_id}.dpth")
    print(f"Rendered {len(_views(scene, args.split))} views to {target}")
    return 0


def _match_by_stem(path: Path, directory: Path) -> Path | None:
    """Image in directory with the same stem as path, if any."""
    return next((p for p in (directory / f"{path.stem}{s}" for s in IMAGE_SUFFIXES) if p.exists()), None)


def cmd_analyze_dcp(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Dark-channel violation ratios of a set of images."""
    calib = config.calib
    masks = out / "masks"
    masks.mkdir(parents=True, exist_ok=True)
    gt_dir = Path(args.gt) if args.gt else None
    if gt_dir is not None and not gt_dir.is_dir():
        raise SceneParseError("directory not found", str(gt_dir))
    rows = []
    for i, path in enumerate(_image_paths([*args.image_dirs, *args.images])):
        image = read_image(path)
        report = analyze_image(image, calib.tau1, calib.tau2, calib.dcp_window)
        stem = f"{i:03d}_{path.stem}"
        write_image(report.dark, masks / f"{stem}_dark.png")
        write_image(np.clip(report.dark_smoothed, 0.0, 1.0), masks / f"{stem}_dark_smoothed.png")
        write_image(report.bad_mask.astype(np.float64), masks / f"{stem}_bad.png")

        mean_residual = ""
        gt_path = _match_by_stem(path, gt_dir) if gt_dir is not None else None
        if gt_path is not None:
            residual = dark_channel_residual(image, read_image(gt_path))
            mean_residual = float(residual.mean())
            write_image(np.clip(residual, 0.0, 1.0), masks / f"{stem}_residual.png")

        stats = report.to_dict()
        rows.append([str(path), stats["violation_ratio"], stats["mean_dark"], stats["mean_dark_smoothed"],
                     stats["bad_pixels"], mean_residual])
        print(f"{path}: violation ratio {report.violation_ratio:.4f}")
    header = ["image", "violation_ratio", "mean_dark", "mean_dark_smoothed", "bad_pixels", "mean_residual"]
    _write_csv(out / "dcp.csv", header, rows)
    return 0


def cmd_analyze_decompose(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Floater / surface decomposition of every view."""
    scene = load_scene(args.scene)
    gaussians = _model(args, scene)
    flags = _load_flags(Path(args.scene), args.flags, len(gaussians), required=True)
    calib = config.calib
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    rows = []
    for view in _views(scene, args.split):
        decomp = decompose(
            gaussians, view.camera, flags, calib.low_pass, calib.splat_extent_sigma, config.runtime.threads
        )
        write_image(np.clip(decomp.c_f, 0.0, 1.0), images / f"{view.camera_id}_c_f.png")
        write_image(np.clip(decomp.t_f, 0.0, 1.0), images / f"{view.camera_id}_t_f.png")
        write_image(np.clip(decomp.c_surf, 0.0, 1.0), images / f"{view.camera_id}_c_surf.png")
        try:
            haze = haze_approx_error(decomp)
            dark = dark_channel_approx_error(decomp)
        except NoFloaterCoverageError:
            logger.warning(f"View {view.camera_id}: no floater coverage")
            haze = dark = float("nan")
        rows.append([view.camera_id, float(decomp.coverage.mean()), decomp.reconstruction_error(), haze, dark,
                     *(float(a) for a in decomp.a_est)])
        print(f"view {view.camera_id}: reconstruction error {decomp.reconstruction_error():.2e}, haze error {haze:.4f}")
    header = ["view_id", "coverage", "reconstruction_error", "haze_approx_error", "dark_channel_approx_error",
              "a_est_r", "a_est_g", "a_est_b"]
    _write_csv(out / "decompose.csv", header, rows)
    return 0


def cmd_calibrate_dcp(args: argparse.Namespace, config: Config, out: Path) -> int:
    """Suggest tau1 / tau2 from renders after a warm-up training."""
    scene = load_scene(args.scene)
    iters = args.iters if args.iters is not None else config.calib.t_start

    warm = copy.deepcopy(config)
    warm.calib.total_iters = iters
    warm.calib.dcp_monitor = False
    warm.runtime.checkpoint_interval = 0
    warm.runtime.test_eval = False
    preset = Ablation(args.ablation)
    dropout = args.dropout or preset.dropout_mode.value
    state, _ = train(scene, warm, ablation=Ablation.BASELINE, seed=config.runtime.seed, dropout=dropout)

    calib = config.calib
    images = [
        np.clip(render(state.gaussians, v.camera, low_pass=calib.low_pass, extent_sigma=calib.splat_extent_sigma,
                       threads=config.runtime.threads).color, 0.0, 1.0)
        for v in scene.train_views
    ]
    tau1, tau2 = calibrate_thresholds(images, percentile=args.percentile, window=calib.dcp_window)
    with open(out / "calibration.yaml", "w") as f:
        yaml.safe_dump(
            {"tau1": tau1, "tau2": tau2, "percentile": float(args.percentile), "warmup_iters": iters},
            f,
            sort_keys=True,
        )
    print(f"tau1={tau1:.6f} tau2={tau2:.6f} (p{args.percentile:g} after {iters} iterations)")
    return 0


def cmd_eval(args: argparse.Namespace, config: Config, out: Path) -> int:
    """PSNR / SSIM over image pairs or a model's views."""
    if args.rendered and args.gt:
        rows = []
        for gt_path in _image_paths([args.gt]):
            match = _match_by_stem(gt_path, Path(args.rendered))
            if match is None:
                raise SceneParseError(f"no rendered image for {gt_path.name}", str(args.rendered))
            rows.append(evaluate_pair(gt_path.stem, read_image(match), read_image(gt_path)))
        rows.append(mean_row(rows))
    elif args.scene:
        scene = load_scene(args.scene)
        views = _views(scene, args.split) if args.split != "all" else (scene.test_views or scene.train_views)
        rows = evaluate(_model(args, scene), views, config.calib, config.runtime.threads)
    else:
        raise ConfigValidationError("eval needs --rendered and --gt, or --scene", "eval")
    write_metrics_csv(rows, out / "metrics.csv")
    for row in rows:
        print(f"{row.view_id}: PSNR {row.psnr:.2f} dB, SSIM {row.ssim:.4f}")
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "inject-floaters": cmd_inject_floaters,
    "train": cmd_train,
    "render": cmd_render,
    "analyze-dcp": cmd_analyze_dcp,
    "analyze-decompose": cmd_analyze_decompose,
    "calibrate-dcp": cmd_calibrate_dcp,
    "eval": cmd_eval,
}


# ==================== Parser ====================


def _common_parser() -> argparse.ArgumentParser:
    parser = SplatcalArgumentParser(add_help=False)
    parser.add_argument("--config", "-c", type=str, default=None, help="Path to configuration file")
    parser.add_argument("--out", "-o", type=str, required=True, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Run seed")
    parser.add_argument("--threads", type=int, default=None, help="Tile workers (fallback: SPLATCAL_THREADS)")
    parser.add_argument(
        "--set", dest="overrides", action="append", metavar="KEY=VALUE", help="Config override, repeatable"
    )
    parser.add_argument(
        "--log-level", "-l", type=str, default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level override",
    )
    return parser


def _calibration_parser() -> argparse.ArgumentParser:
    """Flags of the commands that train."""
    parser = SplatcalArgumentParser(add_help=False)
    calib = parser.add_argument_group("calibration")
    calib.add_argument("--ablation", default=Ablation.BASELINE.value, choices=[a.value for a in Ablation])
    calib.add_argument("--dropout", default=None, choices=[m.value for m in DropoutMode],
                       help="Dropout mode overriding the ablation preset")
    calib.add_argument("--lambda-base", type=float, default=None)
    calib.add_argument("--kappa", type=float, default=None)
    calib.add_argument("--tau1", type=float, default=None)
    calib.add_argument("--tau2", type=float, default=None)
    calib.add_argument("--alpha-min", type=float, default=None)
    calib.add_argument("--eta", type=float, default=None)
    calib.add_argument("--t-prune", type=int, default=None)
    calib.add_argument("--t-start", type=int, default=None)
    calib.add_argument("--iters", type=int, default=None)
    return parser


def build_parser() -> argparse.ArgumentParser:
    """The splatcal argument parser."""
    parser = SplatcalArgumentParser(
        prog="splatcal",
        description="Gaussian splatting with depth-guided dropout and dark-channel floater pruning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True, help="Available commands")
    common = [_common_parser()]
    training = [*common, _calibration_parser()]

    gen = subparsers.add_parser("gen-scene", parents=common, help="Generate a synthetic scene")
    gen.add_argument("--template", default=SceneTemplate.TWO_PLANE_BOX.value, choices=[t.value for t in SceneTemplate])
    gen.add_argument("--n-surface", type=int, default=2000)
    gen.add_argument("--n-cameras", type=int, default=6)
    gen.add_argument("--n-test", type=int, default=2)
    gen.add_argument("--image-size", type=int, default=64)
    gen.add_argument("--rig-radius", type=float, default=3.0)

    inject = subparsers.add_parser("inject-floaters", parents=common, help="Add a floater field to a scene")
    inject.add_argument("--scene", required=True)
    inject.add_argument("--count", type=int, default=500)
    inject.add_argument("--opacity-min", type=float, default=0.02)
    inject.add_argument("--opacity-max", type=float, default=0.15)
    inject.add_argument("--color-mean", type=float, nargs=3, default=[0.8, 0.8, 0.8])
    inject.add_argument("--color-std", type=float, default=0.03)

    train_p = subparsers.add_parser("train", parents=training, help="Train a scene")
    train_p.add_argument("--scene", required=True)
    train_p.add_argument("--flags", default=None, help="Floater flags (default: <scene>/floater_flags.txt)")

    render_p = subparsers.add_parser("render", parents=common, help="Render a model")
    render_p.add_argument("--scene", required=True)
    render_p.add_argument("--model", default=None, help="PLY to render instead of the scene's gaussians")
    render_p.add_argument("--split", default="all", choices=["train", "test", "all"])

    dcp = subparsers.add_parser("analyze-dcp", parents=common, help="Dark-channel violation ratios")
    dcp.add_argument("image_dirs", nargs="*", metavar="IMAGE_DIR", help="Image files or directories")
    dcp.add_argument("--images", nargs="+", default=[], help="More image files or directories")
    dcp.add_argument("--gt", default=None, help="Directory of reference images for the dark-channel residual")

    decomp = subparsers.add_parser("analyze-decompose", parents=common, help="Floater decomposition diagnostics")
    decomp.add_argument("--scene", required=True)
    decomp.add_argument("--model", default=None)
    decomp.add_argument("--flags", default=None)
    decomp.add_argument("--split", default="train", choices=["train", "test", "all"])

    calib = subparsers.add_parser("calibrate-dcp", parents=training, help="Suggest DCP thresholds")
    calib.add_argument("--scene", required=True)
    calib.add_argument("--percentile", type=float, default=95.0)

    ev = subparsers.add_parser("eval", parents=common, help="PSNR / SSIM evaluation")
    ev.add_argument("--rendered", default=None)
    ev.add_argument("--gt", default=None)
    ev.add_argument("--scene", default=None)
    ev.add_argument("--model", default=None)
    ev.add_argument("--split", default="all", choices=["train", "test", "all"])
    return parser


# ==================== Entry points ====================


def run(argv: list[str] | None = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        0 on success, 1 on invalid input, 2 on runtime failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = resolve_config(args)
    except ConfigValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    setup_logging(config.logging)
    out = Path(args.out)
    try:
        if getattr(args, "scene", None):
            _require_separate(args.scene, out)
        # Snapshot before any other output
        write_resolved_config(config, out / RESOLVED_CONFIG_NAME)
        with RunLogger(out, args.command):
            return COMMANDS[args.command](args, config, out)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> int:
    """Main entry point."""
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
