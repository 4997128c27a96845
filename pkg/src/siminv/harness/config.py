"""YAML experiment configs, normalised so that equal experiments hash equally."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from siminv.errors import ParameterError
from siminv.predictor import NULL, AnalyticMixture, Condition, GaussianMixture, text
from siminv.schedule import NoiseSchedule, make_linear_schedule, subsample

DEFAULT_W_VALUES = [0.0, 0.2, 0.5, 0.8, 1.0, 2.0]
DEFAULT_STEP_COUNTS = [10, 30, 50, 100, 500]


@dataclass
class ScheduleSpec:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    n_steps: int = 50

    def build(self, n_steps: Optional[int] = None) -> NoiseSchedule:
        return subsample(make_linear_schedule(self.T, self.beta_start, self.beta_end), n_steps or self.n_steps)


@dataclass
class MixtureSpec:
    weights: list[float] = field(default_factory=lambda: [0.5, 0.5])
    means: list[list[float]] = field(default_factory=lambda: [[-1.5, 1.0], [1.5, -0.5]])
    variances: list[float] = field(default_factory=lambda: [0.25, 0.35])
    conditions: dict[str, list[int]] = field(default_factory=lambda: {"a": [0], "b": [1]})

    def build(self) -> GaussianMixture:
        return GaussianMixture(self.weights, self.means, self.variances)

    def condition(self, name: str) -> Condition:
        if name == "null":
            return NULL
        if name not in self.conditions:
            raise ParameterError(f"unknown condition {name!r}; defined: {sorted(self.conditions)}")
        return text(*self.conditions[name])


@dataclass
class PredictorSpec:
    kind: str = "analytic"
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("analytic", "trained"):
            raise ParameterError(f"predictor kind must be 'analytic' or 'trained', got {self.kind!r}")
        if self.kind == "trained" and not self.path:
            raise ParameterError("trained predictor needs a weights path")


@dataclass
class TrainSpec:
    learning_rate: float = 0.1
    batch_size: int = 256
    iterations: int = 3000
    hidden: list[int] = field(default_factory=lambda: [64, 64])


@dataclass
class SourceSpec:
    """Either an inline latent or a draw from a named condition (seeded)."""

    inline: Optional[list[float]] = None
    sample: Optional[str] = None

    def __post_init__(self):
        if (self.inline is None) == (self.sample is None):
            raise ParameterError("source needs exactly one of 'inline' or 'sample'")


@dataclass
class HookSpec:
    kind: str = "identity"
    lam: float = 0.0
    mask: Optional[list[int]] = None


@dataclass
class EditSpec:
    name: str = "edit"
    source: SourceSpec = field(default_factory=lambda: SourceSpec(sample="a"))
    source_condition: str = "a"
    target_condition: str = "b"
    w_s: float = 0.5
    w_t: float = 7.5
    baseline_mode: str = "siminversion"
    hook: HookSpec = field(default_factory=HookSpec)
    inversion_mode: str = "standard"


@dataclass
class RasterSpec:
    width: int = 16
    height: int = 16
    extent: float = 4.0
    blob: float = 0.6


@dataclass
class SweepSpec:
    w_values: list[float] = field(default_factory=lambda: list(DEFAULT_W_VALUES))
    step_counts: list[int] = field(default_factory=lambda: list(DEFAULT_STEP_COUNTS))
    instances: int = 32
    w_t: float = 7.5
    source_condition: str = "a"
    target_condition: str = "b"
    inversion_mode: str = "standard"
    include_baseline: bool = True
    step_gap_w: float = 0.5
    delta_ws: list[float] = field(default_factory=lambda: [-1.0, 0.0, 0.5, 1.0, 2.0, 7.5])
    raster: RasterSpec = field(default_factory=RasterSpec)

    def __post_init__(self):
        if not self.w_values or not self.delta_ws:
            raise ParameterError("w_values and delta_ws must be nonempty")
        if self.instances < 1:
            raise ParameterError("sweep needs at least one instance")


@dataclass
class TimingSpec:
    dim: int = 256
    n_steps: int = 50
    repeats: int = 5


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = "out"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    edits: list[EditSpec] = field(default_factory=lambda: [EditSpec()])
    sweep: SweepSpec = field(default_factory=SweepSpec)
    timing: TimingSpec = field(default_factory=TimingSpec)
    base_dir: str = field(default=".", compare=False)

    def normalized(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        text_ = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text_.encode()).hexdigest()

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def build_predictor(self, schedule: NoiseSchedule):
        if self.predictor.kind == "analytic":
            return AnalyticMixture(self.mixture.build(), schedule)
        from siminv.trainable import load_params

        path = self.resolve(self.predictor.path)
        if not path.exists():
            raise ParameterError(f"weights file {path} does not exist")
        return load_params(path)

    def source_latent(self, spec: SourceSpec, rng: np.random.Generator) -> np.ndarray:
        if spec.inline is not None:
            return np.asarray(spec.inline, dtype=np.float64)
        return self.mixture.build().sample(rng, 1, self.mixture.condition(spec.sample))[0]


def _build(cls, data):
    """Recursively construct nested dataclasses from plain dicts, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ParameterError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    known = cls.__dataclass_fields__
    unknown = set(data) - set(known)
    if unknown:
        raise ParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is None:
            kwargs[name] = value
        elif isinstance(value, list) and sub is EditSpec:
            kwargs[name] = [_build(EditSpec, v) for v in value]
        else:
            kwargs[name] = _build(sub, value)
    return cls(**kwargs)


_NESTED = {
    (ExperimentConfig, "schedule"): ScheduleSpec,
    (ExperimentConfig, "mixture"): MixtureSpec,
    (ExperimentConfig, "predictor"): PredictorSpec,
    (ExperimentConfig, "train"): TrainSpec,
    (ExperimentConfig, "edits"): EditSpec,
    (ExperimentConfig, "sweep"): SweepSpec,
    (ExperimentConfig, "timing"): TimingSpec,
    (EditSpec, "source"): SourceSpec,
    (EditSpec, "hook"): HookSpec,
    (SweepSpec, "raster"): RasterSpec,
}


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {})
    cfg.base_dir = str(base_dir)
    cfg.mixture.build()
    for name in [cfg.sweep.source_condition, cfg.sweep.target_condition]:
        cfg.mixture.condition(name)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data, base_dir=str(path.parent))
