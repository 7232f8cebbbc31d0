"""Configuration management for splatcal."""

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, get_args

import yaml

from src.core.exceptions import ConfigValidationError

logger = logging.getLogger(__name__)


class DropoutMode(Enum):
    """Per-iteration Gaussian dropout strategy."""

    OFF = "off"
    RANDOM = "random"  # uniform probability, the plain dropout reference
    DDGS = "ddgs"  # piecewise depth bins
    CDGD = "cdgd"  # continuous depth-guided


class TauCenterMode(Enum):
    """How the transition center of the depth weight is chosen."""

    MEDIAN_DEPTH = "median_depth"
    FIXED = "fixed"


class Ablation(Enum):
    """Training presets, one per ablation row."""

    BASELINE = "baseline"
    RANDOM = "random"
    DDGS = "ddgs"
    CDGD = "cdgd"
    DCP_GP = "dcp_gp"
    CDGD_DCP_GP = "cdgd+dcp_gp"

    @property
    def dropout_mode(self) -> DropoutMode:
        """Dropout mode this preset trains with."""
        return {
            Ablation.BASELINE: DropoutMode.OFF,
            Ablation.RANDOM: DropoutMode.RANDOM,
            Ablation.DDGS: DropoutMode.DDGS,
            Ablation.CDGD: DropoutMode.CDGD,
            Ablation.DCP_GP: DropoutMode.OFF,
            Ablation.CDGD_DCP_GP: DropoutMode.CDGD,
        }[self]

    @property
    def prune_enabled(self) -> bool:
        """Whether DCP-guided pruning runs."""
        return self in (Ablation.DCP_GP, Ablation.CDGD_DCP_GP)


@dataclass
class CalibConfig:
    """Every hyperparameter of dropout, DCP pruning, training and densification."""

    # Continuous depth-guided dropout
    lambda_base: float = 0.3
    kappa: float = 10.0
    tau_center_mode: str = "median_depth"
    tau_fixed: float = 1.0
    global_tau: bool = False
    invert_importance: bool = False
    dropout_rescale: bool = False
    dropout_end_iter: int | None = None
    # Piecewise baseline (raw camera depth thresholds)
    d_near: float = 2.0
    d_middle: float = 4.0
    lambda_middle: float = 0.5
    lambda_far: float = 0.25
    # Plain random dropout reference
    random_drop_rate: float = 0.1

    # Dark-channel anomaly detection and pruning
    tau1: float = 0.10
    tau2: float = 0.05
    alpha_min: float = 0.05
    eta: float = 0.5
    t_prune: int = 1000
    t_start: int = 5000
    dcp_window: int = 15
    dcp_reset_scores: bool = True
    dcp_monitor: bool = True
    vis_epsilon: float = 1e-4

    # Training
    total_iters: int = 10000
    lambda1: float = 0.2
    splat_extent_sigma: float = 3.0
    low_pass: float = 0.3

    # Optimizer (per-group learning rates; position decays exponentially)
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    position_lr_scale_by_extent: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    # Densification
    densify_interval: int = 500
    densify_from_iter: int = 500
    densify_until_iter: int = 5000
    densify_grad_threshold: float = 2e-4
    densify_percent_dense: float = 0.01
    cull_opacity: float = 0.005

    @property
    def prune_threshold(self) -> float:
        """Score threshold lambda = eta * T_prune."""
        return self.eta * self.t_prune

    @property
    def tau_mode(self) -> TauCenterMode:
        return TauCenterMode(self.tau_center_mode)

    def validate(self) -> None:
        """
        Check every field range.

        Raises:
            ConfigValidationError: naming the first offending field
        """

        def require(ok: bool, name: str, message: str) -> None:
            if not ok:
                raise ConfigValidationError(f"{message} (got {getattr(self, name)!r})", name)

        require(0 < self.lambda_base <= 1, "lambda_base", "must be in (0, 1]")
        require(self.kappa > 0, "kappa", "must be > 0")
        require(
            self.tau_center_mode in {m.value for m in TauCenterMode},
            "tau_center_mode",
            "must be median_depth or fixed",
        )
        require(self.tau_fixed > 0, "tau_fixed", "must be > 0")
        require(self.d_near > 0, "d_near", "must be > 0")
        require(self.d_near < self.d_middle, "d_middle", "must be > d_near")
        require(0 <= self.lambda_middle <= 1, "lambda_middle", "must be in [0, 1]")
        require(0 <= self.lambda_far <= 1, "lambda_far", "must be in [0, 1]")
        require(0 <= self.random_drop_rate < 1, "random_drop_rate", "must be in [0, 1)")
        require(0 < self.tau2, "tau2", "must be > 0")
        require(self.tau2 <= self.tau1, "tau2", "must be <= tau1")
        require(self.tau1 < 1, "tau1", "must be < 1")
        require(0 < self.alpha_min < 1, "alpha_min", "must be in (0, 1)")
        require(0 < self.eta <= 1, "eta", "must be in (0, 1]")
        require(self.t_prune >= 1, "t_prune", "must be >= 1")
        require(self.total_iters >= 1, "total_iters", "must be >= 1")
        require(self.t_start < self.total_iters, "t_start", "must be < total_iters")
        require(self.t_start >= 0, "t_start", "must be >= 0")
        require(self.dcp_window >= 1 and self.dcp_window % 2 == 1, "dcp_window", "must be odd")
        require(self.vis_epsilon > 0, "vis_epsilon", "must be > 0")
        require(self.lambda1 >= 0, "lambda1", "must be >= 0")
        require(self.splat_extent_sigma > 0, "splat_extent_sigma", "must be > 0")
        require(self.low_pass >= 0, "low_pass", "must be >= 0")
        for name in ("lr_position_init", "lr_position_final", "lr_color", "lr_opacity",
                     "lr_scale", "lr_rotation", "adam_eps"):
            require(getattr(self, name) > 0, name, "must be > 0")
        require(0 <= self.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)")
        require(0 <= self.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)")
        require(self.densify_interval >= 1, "densify_interval", "must be >= 1")
        require(self.densify_grad_threshold > 0, "densify_grad_threshold", "must be > 0")
        require(self.densify_percent_dense > 0, "densify_percent_dense", "must be > 0")
        require(0 <= self.cull_opacity < 1, "cull_opacity", "must be in [0, 1)")
        if self.dropout_end_iter is not None:
            require(self.dropout_end_iter >= 0, "dropout_end_iter", "must be >= 0")


@dataclass
class RuntimeConfig:
    """Execution settings that do not change results."""

    seed: int = 0
    threads: int = 1
    log_interval: int = 500
    checkpoint_interval: int = 1000
    test_eval: bool = True

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigValidationError(f"must be >= 1 (got {self.threads})", "threads")
        if self.log_interval < 1:
            raise ConfigValidationError(f"must be >= 1 (got {self.log_interval})", "log_interval")
        if self.checkpoint_interval < 0:
            raise ConfigValidationError(
                f"must be >= 0 (got {self.checkpoint_interval})", "checkpoint_interval"
            )


@dataclass
class LoggingConfig:
    """Logging configuration."""

    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file: str | None = None


@dataclass
class Config:
    """Main configuration container."""

    calib: CalibConfig = field(default_factory=CalibConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def validate(self) -> None:
        self.calib.validate()
        self.runtime.validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


SECTIONS = {"calib": CalibConfig, "runtime": RuntimeConfig, "logging": LoggingConfig}


def _optional_type(cls: type, name: str) -> type | None:
    """Inner type of an Optional field (`int | None` -> int), else None."""
    hint = next(f.type for f in fields(cls) if f.name == name)
    inner = [arg for arg in get_args(hint) if arg is not type(None)]
    return inner[0] if len(inner) == 1 and isinstance(inner[0], type) else None


def _coerce(default: Any, value: Any, name: str, optional_type: type | None = None) -> Any:
    """
    Match a parsed YAML value to the type of the field default.

    Args:
        default: Default value of the field (None for Optional fields)
        value: Parsed YAML value
        name: Field name, reported on failure
        optional_type: Inner type of an Optional field

    Raises:
        ConfigValidationError: missing, non-scalar or mistyped value
    """
    if value is None:
        if default is None:
            return None
        raise ConfigValidationError("a value is required", name)
    if isinstance(value, (list, dict)):
        raise ConfigValidationError(f"expected a single value, got {value!r}", name)
    if default is None:
        return _coerce(optional_type(), value, name) if optional_type else value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigValidationError(f"expected true/false, got {value!r}", name)
        return value
    if isinstance(default, (int, float)) and isinstance(value, bool):
        raise ConfigValidationError(f"expected a number, got {value!r}", name)
    # PyYAML reads exponents without a dot ("1e-4") as strings
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError) as e:
            raise ConfigValidationError(f"expected a number, got {value!r}", name) from e
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigValidationError(f"expected an integer, got {value!r}", name)
        try:
            return int(value)
        except (TypeError, ValueError) as e:
            raise ConfigValidationError(f"expected an integer, got {value!r}", name) from e
    if isinstance(default, str):
        return str(value)
    return value


def _build_section(cls: type, data: dict[str, Any], section: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigValidationError("section must be a mapping", section)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigValidationError("unknown key", f"{section}.{unknown[0]}")
    defaults = cls()
    return cls(
        **{
            key: _coerce(getattr(defaults, key), value, key, _optional_type(cls, key))
            for key, value in data.items()
        }
    )


def load_config(config_path: str | None = None) -> Config:
    """
    Load configuration from YAML file with environment variable overrides.

    Args:
        config_path: Path to config file. Defaults to config/default.yaml

    Returns:
        Populated Config dataclass

    Raises:
        ConfigValidationError: unknown section or key
    """
    if config_path is None:
        candidates = [
            Path("config/default.yaml"),
            Path(__file__).parent.parent / "config" / "default.yaml",
        ]
        for candidate in candidates:
            if candidate.exists():
                config_path = str(candidate)
                break
    elif not Path(config_path).exists():
        raise ConfigValidationError(f"config file not found: {config_path}", "config")

    config = Config()

    if config_path and Path(config_path).exists():
        with open(config_path) as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigValidationError(f"invalid YAML in {config_path}: {e}", "config") from e

        if data:
            if not isinstance(data, dict):
                raise ConfigValidationError("top level must be a mapping", "config")
            for section, value in data.items():
                if section not in SECTIONS:
                    raise ConfigValidationError("unknown section", section)
                setattr(config, section, _build_section(SECTIONS[section], value or {}, section))

    # Environment variable overrides
    if os.environ.get("SPLATCAL_THREADS"):
        try:
            config.runtime.threads = int(os.environ["SPLATCAL_THREADS"])
        except ValueError as e:
            raise ConfigValidationError("SPLATCAL_THREADS must be an integer", "threads") from e
    if os.environ.get("SPLATCAL_LOG_LEVEL"):
        config.logging.level = os.environ["SPLATCAL_LOG_LEVEL"]

    return config


def apply_overrides(config: Config, overrides: list[str]) -> Config:
    """
    Apply `key=value` overrides in place.

    Keys are bare CalibConfig fields (`kappa=12`) or dotted (`runtime.threads=4`).

    Raises:
        ConfigValidationError: malformed override or unknown key
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigValidationError(f"expected key=value, got {item!r}", "overrides")
        key, raw = (part.strip() for part in item.split("=", 1))
        section, _, name = key.rpartition(".")
        section = section or "calib"
        if section not in SECTIONS:
            raise ConfigValidationError("unknown section", section)
        target = getattr(config, section)
        if name not in {f.name for f in fields(target)}:
            raise ConfigValidationError("unknown key", key)
        try:
            value = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError as e:
            raise ConfigValidationError(f"invalid value {raw!r}", key) from e
        cls = type(target)
        setattr(target, name, _coerce(getattr(cls(), name), value, name, _optional_type(cls, name)))
    return config


def write_resolved_config(config: Config, path: Path) -> None:
    """Snapshot the resolved configuration as YAML with sorted keys."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True, default_flow_style=False)


def setup_logging(config: LoggingConfig) -> None:
    """
    Configure logging based on configuration.

    Args:
        config: Logging configuration
    """
    level = getattr(logging, config.level.upper(), logging.INFO)

    handlers: list[logging.Handler] = [logging.StreamHandler()]

    if config.file:
        log_path = Path(config.file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(config.file))

    logging.basicConfig(
        level=level,
        format=config.format,
        handlers=handlers,
        force=True,
    )

    # Reduce noise from third-party libraries
    logging.getLogger("PIL").setLevel(logging.WARNING)

    logger.debug(f"Logging configured at level {config.level}")
