"""Experiment configuration: a JSON document of typed sections plus dotted overrides."""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, List, Optional

from .analysis import default_etas
from .errors import ConfigError
from .model import ModelConfig
from .objectives import ObjectiveMode
from .pipeline import AlphaSchedule
from .resample import ResizeSpec
from .storage import read_json, write_json
from .trainer import TrainConfig

RESOLVED = "config.json"


@dataclass
class DatasetConfig:
    hr_dir: Optional[str] = None
    scale: int = 2
    antialias: bool = True
    kernel_a: float = -0.5
    val_count: int = 4
    val_dir: Optional[str] = None


@dataclass
class ModelSection:
    channels: int = 16
    n_blocks: int = 4
    residual_scaling: float = 1.0
    kernel_size: int = 3
    bypass_relu: bool = False


@dataclass
class TrainSection:
    total_steps: int = 2000
    batch_size: int = 16
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = "cosine"
    lr_step_every: int = 0
    loss: str = "l1"
    eval_every: int = 100
    probe_every: int = 0
    log_every: int = 10
    budget_fraction: float = 1.0
    lr_patch: int = 48
    augment: bool = True
    prefetch: int = 4


@dataclass
class ObjectiveSection:
    mode: str = "vanilla"


@dataclass
class ProbeConfig:
    etas: Optional[List[float]] = None
    count: int = 8
    low: float = 0.1
    high: float = 10.0
    batch_size: int = 4


@dataclass
class PathsConfig:
    data_dir: str = "data/prepared"
    cache_dir: str = "data/centroids"
    teacher: str = "runs/pretrain/model.ecot"
    out_dir: str = "runs/default"


SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelSection,
    "train": TrainSection,
    "objective": ObjectiveSection,
    "alpha_schedule": AlphaSchedule,
    "probe": ProbeConfig,
    "paths": PathsConfig,
}


def _section(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "expected an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(prefix, str(err))


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    alpha_schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        kwargs = {}
        for key, value in doc.items():
            if key == "seed":
                kwargs["seed"] = int(value)
            elif key in SECTIONS:
                kwargs[key] = _section(SECTIONS[key], value, key)
            else:
                raise ConfigError(key, "unknown key")
        config = cls(**kwargs)
        config.check()
        return config

    @classmethod
    def load(cls, path=None) -> "ExperimentConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        try:
            return cls.from_dict(read_json(path))
        except json.JSONDecodeError as err:
            raise ConfigError(str(path), f"invalid JSON ({err})")

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self):
        try:
            ObjectiveMode(self.objective.mode)
        except ValueError:
            raise ConfigError("objective.mode", f"expected one of {[m.value for m in ObjectiveMode]}")
        self.model_config()
        self.train_config()

    def override(self, dotted: str, value: Any) -> "ExperimentConfig":
        """Returns a new config with ``dotted`` (e.g. ``train.lr0``) set to ``value``."""
        doc = self.to_dict()
        parts = dotted.split(".")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(dotted, "unknown key")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = value
        return ExperimentConfig.from_dict(doc)

    def apply(self, overrides) -> "ExperimentConfig":
        config = self
        for dotted, value in overrides:
            if value is not None:
                config = config.override(dotted, value)
        return config

    def resize_spec(self) -> ResizeSpec:
        return ResizeSpec.down(self.dataset.scale, self.dataset.antialias, self.dataset.kernel_a)

    def model_config(self) -> ModelConfig:
        return ModelConfig(scale=self.dataset.scale, **asdict(self.model))

    def train_config(self, objective: Optional[str] = None) -> TrainConfig:
        return TrainConfig(objective=objective or self.objective.mode, alpha=self.alpha_schedule,
                           seed=self.seed, probe_etas=self.probe_etas(), **asdict(self.train))

    def probe_etas(self) -> List[float]:
        if self.probe.etas:
            return list(self.probe.etas)
        return default_etas(self.train.lr0, self.probe.count, self.probe.low, self.probe.high)

    def save(self, out_dir, name: str = RESOLVED) -> Path:
        path = Path(out_dir) / name
        write_json(path, self.to_dict())
        return path


def parse_assignment(text: str):
    """``a.b=value`` with the value read as JSON when it parses, as a string otherwise."""
    if "=" not in text:
        raise ConfigError(text, "expected key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
