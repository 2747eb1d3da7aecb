"""Experiment configuration: defaults, file parsing, and validation.

Config files are line-oriented ``key = value`` text with ``#`` comments.
Every key has a default; unknown keys are rejected so typos surface
immediately instead of silently running with defaults.
"""

from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .nn.network import LayerSpec
from .optim import SgdConfig
from .preprocess import SMOOTHING_VARIANTS


@dataclass(frozen=True)
class ExperimentConfig:
    # training
    epochs: int = 30
    repeats: int = 5
    batch_size: int = 64
    seed: int = 12345
    test_fraction: float = 0.25
    subject_level_split: bool = False
    balanced: bool = False
    balance_target: int = 0  # 0 = down-sample the majority to the minority count
    variants: tuple = (0, 2, 3, 4)
    hidden_units: int = 500
    # optimizer
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    gamma: float = 0.1
    stepsize: int = 10000
    # paths
    data_dir: str = "datasets"
    out_dir: str = "out"
    # slice pipeline
    drop_last: int = 10
    # phantom generation
    phantom_nc: int = 7
    phantom_ad: int = 33
    phantom_dim: int = 32
    phantom_voxel_mm: float = 2.0
    phantom_effect: float = 0.25
    phantom_noise: float = 0.05

    def __post_init__(self):
        if self.epochs < 1 or self.repeats < 1 or self.batch_size < 1:
            raise ConfigError("epochs, repeats, and batch_size must all be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not self.variants:
            raise ConfigError("variants must not be empty")
        bad = [v for v in self.variants if v not in SMOOTHING_VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; valid: {list(SMOOTHING_VARIANTS)}")
        if self.balance_target < 0:
            raise ConfigError("balance_target must be >= 0")
        if self.drop_last < 0:
            raise ConfigError("drop_last must be >= 0")

    def sgd(self) -> SgdConfig:
        return SgdConfig(
            base_lr=self.base_lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            gamma=self.gamma,
            stepsize=self.stepsize,
        )

    def layer_spec(self, num_classes: int = 2) -> LayerSpec:
        return LayerSpec(hidden_units=self.hidden_units, num_classes=num_classes)

    def dataset_path(self, variant: int) -> str:
        return f"{self.data_dir}/mri{variant}.smrd"


_FIELDS = {
    f.name: (f.type if isinstance(f.type, str) else f.type.__name__)
    for f in fields(ExperimentConfig)
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    try:
        if kind == "bool":
            return _parse_bool(raw, key)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises ConfigError on unknown keys or bad values."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = _parse_value(key, value.strip())
    return ExperimentConfig(**overrides)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Replace selected fields (CLI flags win over the config file)."""
    filtered = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **filtered) if filtered else config
