"""
Experiment configuration for trojanforge

A run is described by one UTF-8 text file of `key = value` lines. Blank lines
and `#` comments are ignored; every key has a documented default, so an empty
file is a valid configuration. KEY_TABLE below is the single list of keys.
"""

import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

try:
    from .data import TriggerSpec, square_trigger
    from .errors import ConfigError
    from .minmax_game import GameConfig
    from .nn_core import TrainConfig
    from .utils import parse_log_level, sha256_hex
except ImportError:
    from data import TriggerSpec, square_trigger
    from errors import ConfigError
    from minmax_game import GameConfig
    from nn_core import TrainConfig
    from utils import parse_log_level, sha256_hex


_KEY_VALUE_PATTERN = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)$')
_COMMENT_PATTERN = re.compile(r'^\s*#')
_INLINE_COMMENT_PATTERN = re.compile(r'\s+#.*$')
_INT_PATTERN = re.compile(r'^[+-]?\d+$')
_BOOL_VALUES = {'true': True, 'yes': True, '1': True, 'false': False, 'no': False, '0': False}
AUTO = "auto"


class KeySpec(NamedTuple):
    kind: str
    default: Any
    check: Optional[Callable[[Any], bool]]
    requirement: str
    doc: str


def _positive(v) -> bool:
    return v > 0


def _at_least(n) -> Callable[[Any], bool]:
    return lambda v: v >= n


def _open_unit(v) -> bool:
    return 0.0 < v < 1.0


def _non_negative(v) -> bool:
    return v >= 0


def _optional_positive(v) -> bool:
    return v is None or v > 0


def _optional_unit(v) -> bool:
    return v is None or 0.0 <= v <= 1.0


KEY_TABLE: Dict[str, KeySpec] = {
    # dataset
    "dataset": KeySpec("choice:synthetic,idx", "synthetic", None, "", "data source"),
    "train_images": KeySpec("path", "", None, "", "IDX3 training images (dataset = idx)"),
    "train_labels": KeySpec("path", "", None, "", "IDX1 training labels (dataset = idx)"),
    "test_images": KeySpec("path", "", None, "", "IDX3 test images (dataset = idx)"),
    "test_labels": KeySpec("path", "", None, "", "IDX1 test labels (dataset = idx)"),
    "train_limit": KeySpec("int", 2000, _at_least(1), ">= 1", "first N training images used"),
    "test_limit": KeySpec("int", 1000, _at_least(1), ">= 1", "first N test images used"),
    "synthetic_classes": KeySpec("int", 3, _at_least(2), ">= 2", "blob classes"),
    "synthetic_per_class": KeySpec("int", 200, _at_least(1), ">= 1", "samples per blob"),
    "synthetic_dim": KeySpec("int", 64, _at_least(4), ">= 4", "features per sample"),
    "synthetic_separation": KeySpec("float", 0.8, _positive, "> 0", "distance between blob centers"),
    "synthetic_spread": KeySpec("float", 0.1, _positive, "> 0", "per-feature std of each blob"),
    "test_fraction": KeySpec("float", 0.25, _open_unit, "in (0,1)", "held-out share of synthetic data"),
    # model and trigger
    "hidden_dims": KeySpec("int_list", [64], None, "", "hidden layer sizes, comma separated"),
    "trigger_size": KeySpec("int", 4, _at_least(1), ">= 1", "side of the square trigger"),
    "trigger_row": KeySpec("int", 0, _non_negative, ">= 0", "top row of the trigger"),
    "trigger_col": KeySpec("int", 0, _non_negative, ">= 0", "left column of the trigger"),
    "trigger_value": KeySpec("float", 1.0, lambda v: 0.0 <= v <= 1.0, "in [0,1]", "patch intensity"),
    "target_class": KeySpec("int", 0, _non_negative, ">= 0", "class triggered inputs map to"),
    # poisoning ratio search
    "alpha": KeySpec("float", 0.03, _open_unit, "(0,1)", "poisoning ratio of the game runs"),
    "gamma": KeySpec("float", 0.002, _open_unit, "(0,1)", "greedy step size and initial alpha"),
    "rounds": KeySpec("int", 2, _at_least(1), ">= 1", "alternation rounds"),
    "sweep_start": KeySpec("float", 0.01, _open_unit, "(0,1)", "first alpha of the loss-curve sweep"),
    "sweep_stop": KeySpec("float", 0.2, _open_unit, "(0,1)", "last alpha of the loss-curve sweep"),
    "sweep_step": KeySpec("float", 0.01, _positive, "> 0", "spacing of the loss-curve sweep"),
    "bound_start": KeySpec("float", 0.05, _open_unit, "(0,1)", "first alpha of the certificate grid"),
    "bound_stop": KeySpec("float", 0.95, _open_unit, "(0,1)", "last alpha of the certificate grid"),
    "bound_step": KeySpec("float", 0.05, _positive, "> 0", "spacing of the certificate grid"),
    "knee_tolerance": KeySpec("float", 0.05, _positive, "> 0", "relative improvement below which the curve is flat"),
    # game
    "itr": KeySpec("int", 600, _at_least(1), ">= 1", "game iterations"),
    "gamma1": KeySpec("float", 0.1, _positive, "> 0", "detector learning rate"),
    "gamma2": KeySpec("float", 0.05, _non_negative, ">= 0", "detector-fooling rate (0 = Baseline Trojan)"),
    "gamma3": KeySpec("float", 0.3, _positive, "> 0", "classification rate of the Trojan model"),
    "probe_count": KeySpec("int", 128, _at_least(1), ">= 1", "random probes per iteration"),
    "probe_mu": KeySpec("float_auto", None, _optional_unit, "in [0,1] or auto", "probe mean (auto = pixel mean)"),
    "probe_sigma": KeySpec("float_auto", None, _optional_positive, "> 0 or auto", "probe std (auto = pixel std)"),
    "game_batch_size": KeySpec("int", 128, _at_least(1), ">= 1", "poisoned minibatch per iteration"),
    "bins": KeySpec("int", 20, _at_least(2), ">= 2", "histogram cells of the divergence estimate"),
    "trojan_only": KeySpec("bool", False, None, "", "classification loss on triggered copies only"),
    "detector_hidden": KeySpec("int", 20, _at_least(1), ">= 1", "detector hidden layer size"),
    "detector_steps": KeySpec("int", 500, _at_least(1), ">= 1", "updates of a freshly trained detector"),
    "probe_batches": KeySpec("int", 20, _at_least(1), ">= 1", "batches of the evasion measurement"),
    "eval_samples": KeySpec("int", 500, _at_least(1), ">= 1", "samples behind the per-iteration accuracies"),
    # base training
    "lr": KeySpec("float", 0.3, _positive, "> 0", "SGD learning rate"),
    "epochs": KeySpec("int", 40, _at_least(1), ">= 1", "epochs per training run"),
    "batch_size": KeySpec("int", 32, _at_least(1), ">= 1", "SGD minibatch size"),
    # run
    "seed": KeySpec("int", 0, _non_negative, ">= 0", "base seed of every random stream"),
    "output_dir": KeySpec("path", "results", None, "", "directory for CSVs and artifacts"),
    "log_level": KeySpec("choice:DEBUG,INFO,WARNING,ERROR", "INFO", None, "", "console log level"),
    "workers": KeySpec("int", 1, _at_least(1), ">= 1", "threads of the alpha sweep"),
    "verify_draws": KeySpec("int", 100, _at_least(1), ">= 1", "random draws per property check"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved run configuration; field names match the config keys."""

    dataset: str = "synthetic"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_limit: int = 2000
    test_limit: int = 1000
    synthetic_classes: int = 3
    synthetic_per_class: int = 200
    synthetic_dim: int = 64
    synthetic_separation: float = 0.8
    synthetic_spread: float = 0.1
    test_fraction: float = 0.25
    hidden_dims: Tuple[int, ...] = (64,)
    trigger_size: int = 4
    trigger_row: int = 0
    trigger_col: int = 0
    trigger_value: float = 1.0
    target_class: int = 0
    alpha: float = 0.03
    gamma: float = 0.002
    rounds: int = 2
    sweep_start: float = 0.01
    sweep_stop: float = 0.2
    sweep_step: float = 0.01
    bound_start: float = 0.05
    bound_stop: float = 0.95
    bound_step: float = 0.05
    knee_tolerance: float = 0.05
    itr: int = 600
    gamma1: float = 0.1
    gamma2: float = 0.05
    gamma3: float = 0.3
    probe_count: int = 128
    probe_mu: Optional[float] = None
    probe_sigma: Optional[float] = None
    game_batch_size: int = 128
    bins: int = 20
    trojan_only: bool = False
    detector_hidden: int = 20
    detector_steps: int = 500
    probe_batches: int = 20
    eval_samples: int = 500
    lr: float = 0.3
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    output_dir: str = "results"
    log_level: str = "INFO"
    workers: int = 1
    verify_draws: int = 100

    def with_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None) -> "ExperimentConfig":
        """Apply the --out / --seed command-line overrides."""
        changes: Dict[str, Any] = {}
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        if seed is not None:
            if seed < 0:
                raise ConfigError(f"seed must be >= 0, got {seed}", key="seed")
            changes["seed"] = int(seed)
        return replace(self, **changes)

    @property
    def log_level_value(self) -> int:
        return parse_log_level(self.log_level)

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed if seed is None else seed)

    def game_config(self, gamma2: Optional[float] = None, seed: Optional[int] = None) -> GameConfig:
        return GameConfig(
            itr=self.itr,
            gamma1=self.gamma1,
            gamma2=self.gamma2 if gamma2 is None else gamma2,
            gamma3=self.gamma3,
            probe_count=self.probe_count,
            mu=self.probe_mu,
            sigma=self.probe_sigma,
            batch_size=self.game_batch_size,
            bins=self.bins,
            trojan_only=self.trojan_only,
            eval_samples=self.eval_samples,
            seed=self.seed if seed is None else seed,
            hidden=self.detector_hidden
        )

    def trigger(self, image_side: int) -> TriggerSpec:
        return square_trigger(
            image_side, size=self.trigger_size, row=self.trigger_row, col=self.trigger_col,
            value=self.trigger_value, target_class=self.target_class
        )

    def sweep_grid(self) -> List[float]:
        return alpha_grid(self.sweep_start, self.sweep_stop, self.sweep_step)

    def bound_grid(self) -> List[float]:
        return alpha_grid(self.bound_start, self.bound_stop, self.bound_step)

    def resolved_text(self) -> str:
        """Canonical `key = value` lines, sorted by key."""
        lines = [f"{name} = {format_value(getattr(self, name))}" for name in sorted(KEY_TABLE)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """First 16 hex characters of the SHA-256 of resolved_text()."""
        return sha256_hex(self.resolved_text())[:16]


def alpha_grid(start: float, stop: float, step: float) -> List[float]:
    """Inclusive evenly spaced grid, rounded to 12 decimals so reruns match exactly."""
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def format_value(value: Any) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, spec: KeySpec, raw: str, line: Optional[int]) -> Any:
    kind = spec.kind
    try:
        if kind == "int":
            if not _INT_PATTERN.match(raw):
                raise ValueError
            return int(raw)
        if kind == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        if kind == "float_auto":
            if raw.lower() == AUTO:
                return None
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        if kind == "bool":
            return _BOOL_VALUES[raw.lower()]
        if kind == "int_list":
            parts = [p.strip() for p in raw.split(",")]
            if not parts or any(not _INT_PATTERN.match(p) or int(p) < 1 for p in parts):
                raise ValueError
            return tuple(int(p) for p in parts)
        if kind.startswith("choice:"):
            choices = kind.split(":", 1)[1].split(",")
            matched = [c for c in choices if c.lower() == raw.lower()]
            if not matched:
                raise ConfigError(f"{key} must be one of {', '.join(choices)}, got {raw!r}", key=key, line=line)
            return matched[0]
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"malformed value for {key}: {raw!r} (expected {kind})", key=key, line=line)


def _check_range(key: str, spec: KeySpec, value: Any, line: Optional[int]) -> None:
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{key} out of range {spec.requirement}: {format_value(value)}", key=key, line=line)


def _check_consistency(config: ExperimentConfig) -> None:
    if config.dataset == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(config, key):
                raise ConfigError(f"{key} is required when dataset = idx", key=key)
    if config.synthetic_classes > config.synthetic_dim:
        raise ConfigError("synthetic_classes must not exceed synthetic_dim", key="synthetic_classes")
    for prefix in ("sweep", "bound"):
        if getattr(config, f"{prefix}_start") > getattr(config, f"{prefix}_stop"):
            raise ConfigError(f"{prefix}_start must not exceed {prefix}_stop", key=f"{prefix}_start")
    if len(config.bound_grid()) < 3:
        raise ConfigError("certificate grid needs at least 3 points", key="bound_step")


def parse_config_text(text: str) -> ExperimentConfig:
    """
    Parse config text into an ExperimentConfig.

    Raises:
        ConfigError: unknown or repeated key, malformed or out-of-range value
    """
    values: Dict[str, Any] = {}
    for line_num, original in enumerate(text.splitlines(), 1):
        line = original.strip()
        if not line or _COMMENT_PATTERN.match(line):
            continue
        line = _INLINE_COMMENT_PATTERN.sub("", line)
        match = _KEY_VALUE_PATTERN.match(line)
        if not match:
            raise ConfigError(f"expected 'key = value', got {original.strip()!r}", line=line_num)
        key, raw = match.group(1).lower(), match.group(2).strip()
        if key not in KEY_TABLE:
            raise ConfigError(f"unknown key {key!r}", key=key, line=line_num)
        if key in values:
            raise ConfigError(f"{key} is set more than once", key=key, line=line_num)
        spec = KEY_TABLE[key]
        value = _convert(key, spec, raw, line_num)
        _check_range(key, spec, value, line_num)
        values[key] = value

    config = ExperimentConfig(**values)
    _check_consistency(config)
    return config


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and parse a config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except UnicodeDecodeError as e:
        raise ConfigError(f"config file is not UTF-8: {path} ({e})")
    return parse_config_text(text)


def render_example_config() -> str:
    """Every key with its default and description, as a commented config file."""
    lines = ["# trojanforge experiment configuration", "# key = value, one per line; '#' starts a comment", ""]
    for key, spec in KEY_TABLE.items():
        requirement = f" ({spec.requirement})" if spec.requirement else ""
        lines.append(f"# {spec.doc}{requirement}")
        lines.append(f"{key} = {format_value(spec.default)}")
    return "\n".join(lines) + "\n"


def _check_table() -> None:
    names = {f.name for f in fields(ExperimentConfig)}
    if names != set(KEY_TABLE):
        raise RuntimeError(f"KEY_TABLE and ExperimentConfig differ: {sorted(names ^ set(KEY_TABLE))}")


_check_table()
