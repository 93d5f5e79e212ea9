"""Typed configuration sections and YAML loading.

Defaults live in ``synthetic/config.yaml``; a user file passed with
``--config`` is merged over them with ``dict_deep_update`` and command-line
flags are applied last.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from neuroconv import utils as neuroconv_utils

from stpp_mot.errors import DataError, RejectedConfigError

DEFAULT_CONFIG_PATH = Path(__file__).parent / "synthetic" / "config.yaml"

VARIANTS = ("timeindep", "sync", "syncasync")
VARIANT_ALIASES = {
    "time-independent": "timeindep",
    "sync-only": "sync",
    "sync+async": "syncasync",
}


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise RejectedConfigError(
            f"Unknown model variant {name}, expected one of {VARIANTS}"
        )
    return name


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise RejectedConfigError(f"{key}: {message}")


@dataclass(frozen=True)
class SimulationConfig:
    n_agents: int = 6
    n_frames: int = 60
    height: int = 32
    width: int = 32
    noise_rate: float = 0.15
    confusion_rate: float = 0.1
    jitter_sigma: float = 0.5
    n_noise_sources: int = 2
    noise_radius: float = 4.0
    noise_excitation: float = 0.3
    min_box: int = 3
    max_box: int = 6
    feature_dim: int = 8
    feature_noise: float = 0.05
    max_speed: float = 1.0
    miss_rate: float = 0.0
    clutter_intensity: float = 0.3
    crossing_distance: float = 4.0

    def validate(self) -> None:
        _require(self.n_agents >= 0, "n_agents", "must be >= 0")
        _require(self.n_frames >= 1, "n_frames", "must be >= 1")
        _require(
            self.height >= 4 and self.width >= 4, "grid", "must be >= 4x4"
        )
        for key in ("noise_rate", "confusion_rate", "miss_rate"):
            value = getattr(self, key)
            _require(0.0 <= value <= 1.0, key, "must be in [0, 1]")
        _require(
            0.0 <= self.noise_excitation <= 1.0,
            "noise_excitation",
            "must be in [0, 1]",
        )
        _require(self.jitter_sigma >= 0, "jitter_sigma", "must be >= 0")
        _require(self.n_noise_sources >= 0, "n_noise_sources", "must be >= 0")
        _require(self.noise_radius > 0, "noise_radius", "must be > 0")
        _require(
            1 <= self.min_box <= self.max_box, "min_box", "must be <= max_box"
        )
        _require(self.feature_dim >= 2, "feature_dim", "must be >= 2")
        _require(self.feature_noise >= 0, "feature_noise", "must be >= 0")
        _require(self.max_speed >= 0, "max_speed", "must be >= 0")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "syncasync"
    feature_channels: int = 8
    hidden_channels: int = 8
    kernel_size: int = 3
    mlp_hidden: int = 16
    activation: str = "softplus"
    relu_epsilon: float = 1e-3
    evolving: str = "mlp"
    decay_scale: float = 1.0

    def validate(self) -> None:
        canonical_variant(self.variant)
        _require(
            self.feature_channels >= 1, "feature_channels", "must be >= 1"
        )
        _require(self.hidden_channels >= 1, "hidden_channels", "must be >= 1")
        _require(self.kernel_size % 2 == 1, "kernel_size", "must be odd")
        _require(self.mlp_hidden >= 1, "mlp_hidden", "must be >= 1")
        _require(
            self.activation
            in ("sigmoid", "biased-relu", "elu-plus-one", "softplus"),
            "activation",
            f"unknown activation {self.activation}",
        )
        _require(self.relu_epsilon > 0, "relu_epsilon", "must be > 0")
        _require(
            self.evolving in ("mlp", "decay"),
            "evolving",
            "must be 'mlp' or 'decay'",
        )
        _require(self.decay_scale > 0, "decay_scale", "must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    iterations: int = 2000
    decay_factor: float = 0.1
    decay_interval: int = 800
    seed: int = 0
    clip_norm: float = 5.0
    window: int = 12
    loss: str = "nll"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    log_interval: int = 50
    checkpoint_interval: int = 0

    def validate(self) -> None:
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(self.iterations >= 0, "iterations", "must be >= 0")
        _require(
            0 < self.decay_factor <= 1, "decay_factor", "must be in (0, 1]"
        )
        _require(self.decay_interval >= 1, "decay_interval", "must be >= 1")
        _require(self.clip_norm > 0, "clip_norm", "must be > 0")
        _require(self.window >= 0, "window", "must be >= 0")
        _require(
            self.loss in ("nll", "mse", "bce"),
            "loss",
            "must be 'nll', 'mse' or 'bce'",
        )
        _require(0 <= self.beta1 < 1, "beta1", "must be in [0, 1)")
        _require(0 <= self.beta2 < 1, "beta2", "must be in [0, 1)")
        _require(self.adam_epsilon > 0, "adam_epsilon", "must be > 0")
        _require(self.log_interval >= 1, "log_interval", "must be >= 1")
        _require(
            self.checkpoint_interval >= 0,
            "checkpoint_interval",
            "must be >= 0",
        )


@dataclass(frozen=True)
class InferenceConfig:
    tau_e: float = 0.5
    mode: str = "threshold"

    def validate(self) -> None:
        _require(self.tau_e >= 0, "tau_e", "must be >= 0")
        _require(
            self.mode in ("threshold", "bernoulli"),
            "mode",
            "must be 'threshold' or 'bernoulli'",
        )


@dataclass(frozen=True)
class FilterConfig:
    tau_r: float = 0.5

    def validate(self) -> None:
        _require(0.0 <= self.tau_r <= 1.0, "tau_r", "must be in [0, 1]")


@dataclass(frozen=True)
class TrackerConfig:
    theta_a: float = 0.8
    theta_m: float = 0.3
    s_c: float = 0.5
    k: int = 3

    def validate(self) -> None:
        _require(-1.0 <= self.theta_a <= 1.0, "theta_a", "must be in [-1, 1]")
        _require(0.0 <= self.theta_m <= 1.0, "theta_m", "must be in [0, 1]")
        _require(0.0 < self.s_c < 1.0, "s_c", "must be in (0, 1)")
        _require(self.k >= 1, "k", "must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """All settings of one run, grouped by stage."""

    seed: int = 0
    out_dir: str = "stpp_run"
    variants: tuple = VARIANTS
    n_scenarios: int = 20
    n_train_scenarios: int = 8
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def validate(self) -> "RunConfig":
        _require(self.seed >= 0, "seed", "must be >= 0")
        _require(self.n_scenarios >= 1, "n_scenarios", "must be >= 1")
        _require(
            1 <= self.n_train_scenarios <= self.n_scenarios,
            "n_train_scenarios",
            "must be in [1, n_scenarios]",
        )
        for variant in self.variants:
            canonical_variant(variant)
        for section in _SECTIONS:
            getattr(self, section).validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["variants"] = list(self.variants)
        return out


_SECTIONS = {
    "simulation": SimulationConfig,
    "model": ModelConfig,
    "training": TrainConfig,
    "inference": InferenceConfig,
    "filter": FilterConfig,
    "tracker": TrackerConfig,
}


def section_from_dict(cls, values: Optional[Dict[str, Any]], name: str):
    """Build a config dataclass, rejecting unknown keys."""
    values = dict(values or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise RejectedConfigError(f"{name}: unknown keys {unknown}")
    converted = {}
    for key, value in values.items():
        default = known[key].default
        try:
            if isinstance(default, bool):
                converted[key] = bool(value)
            elif isinstance(default, int):
                if float(value) != int(value):
                    raise ValueError(f"{value} is not an integer")
                converted[key] = int(value)
            elif isinstance(default, float):
                converted[key] = float(value)
            else:
                converted[key] = value
        except (TypeError, ValueError) as e:
            raise RejectedConfigError(f"{name}.{key}: {e}") from e
    return cls(**converted)


def load_dict_from_file(path) -> Dict:
    """Read a YAML mapping, reporting parse errors with line and column."""
    path = Path(path)
    if not path.exists():
        raise DataError("config file not found", path=str(path))
    try:
        loaded = neuroconv_utils.load_dict_from_file(path)
    except AssertionError as e:
        raise RejectedConfigError(f"{path}: {e}") from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise DataError(
            f"cannot parse config: {getattr(e, 'problem', e)}",
            path=str(path),
            line=None if mark is None else mark.line + 1,
            column=None if mark is None else mark.column + 1,
        ) from e
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise RejectedConfigError(f"{path}: top level must be a mapping")
    return loaded


def dict_deep_update(base: Dict, update: Dict) -> Dict:
    """Return a copy of ``base`` with ``update`` merged in recursively.

    Lists such as ``variants`` are replaced, not appended to.
    """
    return neuroconv_utils.dict_deep_update(
        base, update, append_list=False, copy=True
    )


def run_config_from_dict(values: Dict[str, Any]) -> RunConfig:
    values = dict(values)
    sections = {
        name: section_from_dict(cls, values.pop(name, None), name)
        for name, cls in _SECTIONS.items()
    }
    top = section_from_dict(_TopLevel, values, "run")
    variants = tuple(canonical_variant(v) for v in top.variants)
    return RunConfig(
        seed=top.seed,
        out_dir=str(top.out_dir),
        variants=variants,
        n_scenarios=top.n_scenarios,
        n_train_scenarios=top.n_train_scenarios,
        **sections,
    ).validate()


@dataclass(frozen=True)
class _TopLevel:
    seed: int = 0
    out_dir: str = "stpp_run"
    variants: tuple = VARIANTS
    n_scenarios: int = 20
    n_train_scenarios: int = 8


def load_run_config(
    path=None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Load defaults, merge an optional user file, then ``overrides``."""
    values = load_dict_from_file(DEFAULT_CONFIG_PATH)
    if path is not None:
        values = dict_deep_update(values, load_dict_from_file(path))
    if overrides:
        values = dict_deep_update(values, overrides)
    return run_config_from_dict(values)
