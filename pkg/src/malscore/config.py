"""Experiment configuration: strict JSON parsing with schema versioning.

Unknown keys are rejected so typos fail loudly instead of silently running
with defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigError

SCHEMA_VERSION = 1


def _from_dict(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**doc)


@dataclass
class ScheduleConfig:
    kind: str = "vp"
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    beta_min: Optional[float] = None
    beta_max: Optional[float] = None
    T: float = 1.0

    def build(self):
        from .sde import make_schedule

        kw = {"T": self.T}
        if self.kind == "ve":
            kw.update(sigma_min=self.sigma_min, sigma_max=self.sigma_max)
        elif self.kind in ("vp", "subvp"):
            kw.update(beta_min=self.beta_min, beta_max=self.beta_max)
        else:
            raise ConfigError(f"schedule kind {self.kind!r} not configurable here")
        return make_schedule(self.kind, **kw)


@dataclass
class GridConfig:
    t_end: float = 1.0
    n_steps: int = 500
    t0: float = 0.0
    integer_mode: bool = False

    def build(self):
        from .sde import TimeGrid

        return TimeGrid(self.t0, self.t_end, self.n_steps, self.integer_mode)


@dataclass
class DatasetConfig:
    kind: str = "gmm8"
    n_points: int = 8000
    seed: int = 1
    radius: float = 1.0
    component_std: float = 0.1
    swiss_noise: float = 0.05

    def build(self):
        from .datasets import Dataset2D

        kw = {"kind": self.kind, "n_points": self.n_points, "seed": self.seed}
        if self.kind == "gmm8":
            kw.update(radius=self.radius, component_std=self.component_std)
        elif self.kind == "swissroll":
            kw.update(swiss_noise=self.swiss_noise)
        return Dataset2D(**kw)


@dataclass
class SimulateConfig:
    n_paths: int = 8000
    x0: str = "dataset"          # "dataset" | "zero"


@dataclass
class TrainingConfig:
    epochs: int = 40
    batch_size: int = 512
    lr: float = 1e-3
    weight_decay: float = 1e-4
    hidden: list = field(default_factory=lambda: [128, 128, 128])
    max_examples: Optional[int] = 400_000
    seed: int = 0
    # optional [epochs, lr] pairs run in sequence (step-decay schedule);
    # overrides the single epochs/lr pair above
    stages: Optional[list] = None


@dataclass
class SamplerConfig:
    steps: int = 500
    n_samples: int = 4000
    field: str = "mlp"           # "oracle" | "mlp" | "nonlinear-mc"
    prior: Optional[str] = None  # default chosen from the schedule
    trajectories: bool = False


@dataclass
class MetricsConfig:
    n_projections: int = 64
    n_truth: int = 4000
    truth_seed: int = 99


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    dimension: int = 2
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        sections = {
            "schedule": ScheduleConfig, "grid": GridConfig,
            "dataset": DatasetConfig, "simulate": SimulateConfig,
            "training": TrainingConfig, "sampler": SamplerConfig,
            "metrics": MetricsConfig,
        }
        parsed = {}
        for name, sub_cls in sections.items():
            if name in doc:
                parsed[name] = _from_dict(sub_cls, doc.pop(name), name)
        top = _from_dict(cls, {**doc, **{k: v for k, v in parsed.items()}}, "config")
        return top

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, source: str) -> "ExperimentConfig":
        """Load from a file path or a bundled preset ('preset:<name>')."""
        if source.startswith("preset:"):
            name = source.split(":", 1)[1]
            ref = resources.files("malscore").joinpath("presets", name + ".json")
            try:
                text = ref.read_text()
            except FileNotFoundError:
                raise ConfigError(f"no bundled preset {name!r}") from None
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(f"config file {source!r} not found")
            text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)
