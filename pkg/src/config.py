"""
Configuration module for orojar-lab
Experiment settings loaded from JSON or TOML with dotted command-line overrides
"""
import copy
import json
import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

from .utils import substitute_in_config

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "OROJAR_OUTPUT_ROOT"

PENALTY_KINDS = ("none", "orojar", "hessian")
FIRST_LAYER_MODES = ("with_norm_act", "bare")


class ConfigurationError(Exception):
    """Base exception for configuration errors"""
    pass


class UnknownKeyError(ConfigurationError):
    """Exception for keys that no config section defines"""
    pass


@dataclass
class DataConfig:
    """Procedural dataset settings"""
    seed: int = 0
    count: int = 20000
    resolution: int = 32
    workers: int = 1
    dataset_path: Optional[str] = None
    contact_sheet_count: int = 64


@dataclass
class ModelConfig:
    """Generator / discriminator architecture"""
    latent_dim: int = 6
    resolution: int = 32
    base_channels: int = 256
    tap_count: int = 4
    leaky_slope: float = 0.2
    init_std: float = 0.02
    bn_momentum: float = 0.9

    @property
    def layer_count(self) -> int:
        """Fully-connected layer plus one transposed convolution per doubling from 4x4"""
        return 1 + int(round(math.log2(self.resolution / 4)))


@dataclass
class PenaltyConfig:
    """Regularizer settings; `lam` is spelled `lambda` in config files"""
    kind: str = "orojar"
    lam: float = 10.0
    epsilon: float = 0.1
    k_samples: int = 2
    layers: List[int] = field(default_factory=lambda: [1, 2, 3, 4])

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.lam > 0


@dataclass
class TrainConfig:
    iters: int = 30000
    batch_size: int = 32
    g_lr: float = 2e-4
    d_lr: float = 2e-4
    betas: List[float] = field(default_factory=lambda: [0.5, 0.999])
    first_layer_mode: str = "with_norm_act"
    eval_every: int = 1000
    checkpoint_every: int = 5000
    log_every: int = 100
    prefetch: int = 4


@dataclass
class DiscoveryConfig:
    n_directions: Optional[int] = None
    eta: float = 1.0
    iters: int = 5000
    lr: float = 1e-3
    batch_size: int = 16
    traverse_range: List[float] = field(default_factory=lambda: [-2.5, 2.5])
    traverse_steps: int = 9


@dataclass
class MetricsConfig:
    vp_pairs: int = 10000
    vp_epochs: int = 10
    vp_delta: float = 1.0
    vp_repeats: int = 3
    vp_batch_size: int = 64
    vp_lr: float = 1e-3
    activeness_nz: int = 64
    activeness_steps: int = 16
    ppl_paths: int = 2000
    ppl_epsilon: float = 1e-4
    ppl_reject_outliers: bool = True
    probe_batch: int = 64


@dataclass
class TraverseConfig:
    value_range: List[float] = field(default_factory=lambda: [-2.0, 2.0])
    steps: int = 9
    sefa_top_k: Optional[int] = None


SECTION_TYPES = {
    "data": DataConfig,
    "model": ModelConfig,
    "penalty": PenaltyConfig,
    "train": TrainConfig,
    "discovery": DiscoveryConfig,
    "metrics": MetricsConfig,
    "traverse": TraverseConfig,
}

# file key -> dataclass attribute
KEY_ALIASES = {"lambda": "lam"}
ATTRIBUTE_KEYS = {attr: key for key, attr in KEY_ALIASES.items()}


@dataclass
class ExperimentConfig:
    """Complete resolved experiment configuration"""
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    traverse: TraverseConfig = field(default_factory=TraverseConfig)

    def to_dict(self) -> Dict[str, Any]:
        """Resolved config using file spellings (e.g. `lambda`)"""
        result: Dict[str, Any] = {"seed": self.seed, "output_dir": self.output_dir, "checkpoint": self.checkpoint}
        for section in SECTION_TYPES:
            values = asdict(getattr(self, section))
            result[section] = {ATTRIBUTE_KEYS.get(key, key): value for key, value in values.items()}
        return result

    def output_path(self) -> Path:
        """Output directory, rebased under $OROJAR_OUTPUT_ROOT when it is relative"""
        path = Path(self.output_dir)
        if (root := os.environ.get(OUTPUT_ROOT_ENV)) and not path.is_absolute():
            return Path(root) / path
        return path

    def validate(self) -> None:
        """Raise ConfigurationError on any value outside its documented range"""
        problems = list(_validation_problems(self))
        if problems:
            raise ConfigurationError("; ".join(problems))


def _validation_problems(config: ExperimentConfig):
    model, penalty, train = config.model, config.penalty, config.train
    if model.resolution < 8 or model.resolution & (model.resolution - 1):
        yield f"model.resolution must be a power of two >= 8, got {model.resolution}"
    elif not 1 <= model.tap_count <= model.layer_count:
        yield f"model.tap_count must be in 1..{model.layer_count}, got {model.tap_count}"
    if config.data.resolution != model.resolution:
        yield f"data.resolution ({config.data.resolution}) must equal model.resolution ({model.resolution})"
    if model.latent_dim < 1:
        yield f"model.latent_dim must be positive, got {model.latent_dim}"
    if model.base_channels < 4 or model.base_channels % 4:
        yield f"model.base_channels must be a positive multiple of 4, got {model.base_channels}"
    if penalty.kind not in PENALTY_KINDS:
        yield f"penalty.kind must be one of {list(PENALTY_KINDS)}, got {penalty.kind!r}"
    if penalty.epsilon <= 0:
        yield f"penalty.epsilon must be > 0, got {penalty.epsilon}"
    if penalty.k_samples < 2:
        yield f"penalty.k_samples must be >= 2, got {penalty.k_samples}"
    if penalty.lam < 0:
        yield f"penalty.lambda must be >= 0, got {penalty.lam}"
    if not penalty.layers or any(not 1 <= layer <= model.tap_count for layer in penalty.layers):
        yield f"penalty.layers must be a non-empty subset of 1..{model.tap_count}, got {penalty.layers}"
    if train.iters <= 0 or train.batch_size <= 0:
        yield f"train.iters and train.batch_size must be positive, got {train.iters} and {train.batch_size}"
    if train.first_layer_mode not in FIRST_LAYER_MODES:
        yield f"train.first_layer_mode must be one of {list(FIRST_LAYER_MODES)}, got {train.first_layer_mode!r}"
    if len(train.betas) != 2 or not all(0 <= b < 1 for b in train.betas):
        yield f"train.betas must be two values in [0, 1), got {train.betas}"
    if config.data.count <= 0:
        yield f"data.count must be positive, got {config.data.count}"
    if (n := config.discovery.n_directions) is not None and not 1 <= n <= model.latent_dim:
        yield f"discovery.n_directions must be in 1..{model.latent_dim}, got {n}"
    if config.metrics.vp_pairs < 1000:
        yield f"metrics.vp_pairs must be >= 1000, got {config.metrics.vp_pairs}"
    if config.metrics.activeness_nz < 32 or config.metrics.activeness_steps < 8:
        yield "metrics.activeness_nz must be >= 32 and metrics.activeness_steps >= 8"
    if config.metrics.ppl_epsilon <= 0:
        yield f"metrics.ppl_epsilon must be > 0, got {config.metrics.ppl_epsilon}"
    if config.traverse.steps < 2 or config.discovery.traverse_steps < 2:
        yield "traversal steps must be >= 2"


def parse_override(text: str) -> Tuple[List[str], Any]:
    """Split `section.key=value`; the value is JSON when it parses, a string otherwise.

    Example:
        >>> parse_override("penalty.lambda=10")
        (['penalty', 'lambda'], 10)
    """
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"Invalid override (expected key=value): {text}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _coerce(dotted: str, hint: Any, value: Any) -> Any:
    """Check a raw value against a field's type annotation, converting ints to floats where declared"""
    origin = get_origin(hint)
    if origin is Union:
        if value is None:
            return None
        inner = [arg for arg in get_args(hint) if arg is not type(None)]
        return _coerce(dotted, inner[0], value)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{dotted} expects a list, got {value!r}")
        (item_hint,) = get_args(hint) or (Any,)
        return [_coerce(f"{dotted}[{i}]", item_hint, item) for i, item in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{dotted} expects a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"{dotted} expects an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{dotted} expects a number, got {value!r}")
        return float(value)
    if hint is str and not isinstance(value, str):
        raise ConfigurationError(f"{dotted} expects a string, got {value!r}")
    return value


def _build_section(name: str, section_type: type, data: Any) -> Any:
    if not isinstance(data, dict):
        raise ConfigurationError(f"Section '{name}' must be a table, got {type(data).__name__}")
    hints = get_type_hints(section_type)
    values = {}
    for key, value in data.items():
        attr = KEY_ALIASES.get(key, key)
        if attr not in hints:
            raise UnknownKeyError(f"Unknown configuration key: {name}.{key}")
        values[attr] = _coerce(f"{name}.{key}", hints[attr], value)
    return section_type(**values)


def build_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a raw nested mapping"""
    hints = get_type_hints(ExperimentConfig)
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        if key in SECTION_TYPES:
            kwargs[key] = _build_section(key, SECTION_TYPES[key], value)
        elif key in hints:
            kwargs[key] = _coerce(key, hints[key], value)
        else:
            raise UnknownKeyError(f"Unknown configuration key: {key}")
    config = ExperimentConfig(**kwargs)
    config.validate()
    return config


def describe_defaults() -> List[Tuple[str, Any]]:
    """Every dotted key with its default value, in declaration order"""
    return _flatten(ExperimentConfig().to_dict())


def _flatten(data: Dict[str, Any], prefix: str = "") -> List[Tuple[str, Any]]:
    entries: List[Tuple[str, Any]] = []
    for key, value in data.items():
        if isinstance(value, dict):
            entries.extend(_flatten(value, f"{prefix}{key}."))
        else:
            entries.append((f"{prefix}{key}", value))
    return entries


class ConfigurationManager:
    """Loads the experiment configuration for orojar-lab"""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.config_file = Path(config_file) if config_file is not None else None
        self.config: Dict[str, Any] = {}  # raw configuration after overrides

    def load(self, overrides: Sequence[str] = ()) -> ExperimentConfig:
        """Load the configuration file (if any), apply overrides and validate"""
        raw: Dict[str, Any] = {}
        if self.config_file is not None:
            raw = self._read_file()

        raw = copy.deepcopy(raw)
        for text in overrides:
            path, value = parse_override(text)
            self._set_dotted(raw, path, value)

        self.config = substitute_in_config(raw)
        config = build_config(self.config)
        logger.info(f"Loaded configuration ({len(overrides)} overrides, seed {config.seed})")
        return config

    def _read_file(self) -> Dict[str, Any]:
        if not self.config_file.exists():
            error_msg = f"Configuration file not found: {self.config_file}"
            logger.error(error_msg)
            raise FileNotFoundError(error_msg)

        try:
            if self.config_file.suffix == ".toml":
                with self.config_file.open("rb") as f:
                    data = tomllib.load(f)
            else:
                with self.config_file.open("r") as f:
                    data = json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Invalid JSON in configuration file: {e}")
            raise ConfigurationError(f"Invalid JSON: {e}") from e
        except tomllib.TOMLDecodeError as e:
            logger.error(f"Invalid TOML in configuration file: {e}")
            raise ConfigurationError(f"Invalid TOML: {e}") from e

        if not isinstance(data, dict):
            raise ConfigurationError(f"Configuration root must be an object, got {type(data).__name__}")
        return data

    @staticmethod
    def _set_dotted(raw: Dict[str, Any], path: List[str], value: Any) -> None:
        target = raw
        for part in path[:-1]:
            if not isinstance(target.setdefault(part, {}), dict):
                raise ConfigurationError(f"Cannot override inside non-table key: {'.'.join(path)}")
            target = target[part]
        target[path[-1]] = value
