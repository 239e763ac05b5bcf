"""Experiment configuration: nested dataclasses loaded from YAML.

Unknown keys are rejected and every value is validated before any stage
runs.  ``default_config()`` holds the desk-scale settings.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .evaluation import Method
from .terrain import KINDS, SPLITS


@dataclass
class DatasetConfig:
    kinds: list = field(default_factory=lambda: list(KINDS))
    split: str = "test"
    instances: int = 20
    groups: int = 10
    size: int = 96
    roughness: float = 0.5
    max_pitch_deg: float = 30.0
    feature_scale: float = 24.0
    sigma_base: float | None = None  # None: class-table default
    gradient_gain: float | None = None


@dataclass
class TrainingConfig:
    samples_per_class: int = 50
    max_pitch_deg: float = 30.0


@dataclass
class GridAxis:
    low: float
    high: float
    num: int = 10

    def values(self):
        return tuple(float(v) for v in np.geomspace(self.low, self.high, self.num))


@dataclass
class GPConfig:
    lengthscale: GridAxis = field(default_factory=lambda: GridAxis(0.05, 2.0))
    signal_variance: GridAxis = field(default_factory=lambda: GridAxis(1e-3, 2.0))
    noise_variance: GridAxis = field(default_factory=lambda: GridAxis(1e-5, 0.1))

    def grid(self):
        return {k: getattr(self, k).values() for k in ("lengthscale", "signal_variance", "noise_variance")}


@dataclass
class ClassifierConfig:
    # per dataset kind; a single number applies to every kind
    accuracy: dict | float = field(default_factory=lambda: {"std": 0.95, "es": 0.9, "aa": 1.0})
    smoothing: int = 1
    logit_noise: float = 0.0

    def accuracy_for(self, kind):
        if isinstance(self.accuracy, dict):
            return self.accuracy[kind]
        return self.accuracy


@dataclass
class RiskSection:
    alpha: float = 0.99
    mc_samples: int = 1000
    shared_class: bool = True


@dataclass
class PlannerConfig:
    heuristic: str = "zero"
    u_ref: float = 0.1
    start: list = field(default_factory=lambda: [8.0, 8.0])
    goal: list = field(default_factory=lambda: [88.0, 88.0])


@dataclass
class EvaluationConfig:
    methods: list = field(default_factory=lambda: ["sgp+ev", "sgp+var", "sgp+cvar", "mgp+ev", "mgp+var", "mgp+cvar"])
    alphas: list = field(default_factory=lambda: [0.0, 0.6, 0.9, 0.99])


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/desk"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    risk: RiskSection = field(default_factory=RiskSection)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def method_list(self, alpha=None):
        a = self.risk.alpha if alpha is None else alpha
        return [Method.parse(m, a) for m in self.evaluation.methods]

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_SECTIONS = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "training"): TrainingConfig,
    (ExperimentConfig, "gp"): GPConfig,
    (ExperimentConfig, "classifier"): ClassifierConfig,
    (ExperimentConfig, "risk"): RiskSection,
    (ExperimentConfig, "planner"): PlannerConfig,
    (ExperimentConfig, "evaluation"): EvaluationConfig,
    (GPConfig, "lengthscale"): GridAxis,
    (GPConfig, "signal_variance"): GridAxis,
    (GPConfig, "noise_variance"): GridAxis,
}


def _number(v, name, lo=None, hi=None, integer=False, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{name} must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{name} must be <= {hi}, got {v}")


def validate(cfg):
    """Raise ConfigError on the first invalid value; returns ``cfg``."""
    _number(cfg.seed, "seed", 0, integer=True)
    d = cfg.dataset
    if not d.kinds or any(k not in KINDS for k in d.kinds):
        raise ConfigError(f"dataset.kinds must be a non-empty subset of {KINDS}")
    if d.split not in SPLITS:
        raise ConfigError(f"dataset.split must be one of {SPLITS}")
    _number(d.instances, "dataset.instances", 1, integer=True)
    _number(d.groups, "dataset.groups", 1, integer=True)
    _number(d.size, "dataset.size", 3, integer=True)
    _number(d.roughness, "dataset.roughness", 0, 1, lo_open=True)
    _number(d.max_pitch_deg, "dataset.max_pitch_deg", 0, 45, lo_open=True)
    _number(d.feature_scale, "dataset.feature_scale", 0, lo_open=True)
    if d.sigma_base is not None:
        _number(d.sigma_base, "dataset.sigma_base", 0)
    if d.gradient_gain is not None:
        _number(d.gradient_gain, "dataset.gradient_gain", 0)
    _number(cfg.training.samples_per_class, "training.samples_per_class", 1, integer=True)
    _number(cfg.training.max_pitch_deg, "training.max_pitch_deg", 0, 45, lo_open=True)
    for name in ("lengthscale", "signal_variance", "noise_variance"):
        ax = getattr(cfg.gp, name)
        _number(ax.low, f"gp.{name}.low", 0, lo_open=True)
        _number(ax.high, f"gp.{name}.high", ax.low)
        _number(ax.num, f"gp.{name}.num", 1, integer=True)
    c = cfg.classifier
    if isinstance(c.accuracy, dict):
        missing = sorted(set(d.kinds) - set(c.accuracy))
        if missing or set(c.accuracy) - set(KINDS):
            raise ConfigError(f"classifier.accuracy must map each configured kind (of {KINDS}) to a value")
        for kind, a in c.accuracy.items():
            _number(a, f"classifier.accuracy.{kind}", 0, 1, lo_open=True)
    else:
        _number(c.accuracy, "classifier.accuracy", 0, 1, lo_open=True)
    _number(c.smoothing, "classifier.smoothing", 0, integer=True)
    _number(c.logit_noise, "classifier.logit_noise", 0)
    r = cfg.risk
    _number(r.alpha, "risk.alpha", 0, 1)
    _number(r.mc_samples, "risk.mc_samples", 1, integer=True)
    if r.alpha > 0.9 and r.mc_samples < 1000:
        raise ConfigError("risk.mc_samples must be >= 1000 when alpha > 0.9")
    if not isinstance(r.shared_class, bool):
        raise ConfigError("risk.shared_class must be true or false")
    p = cfg.planner
    if p.heuristic not in ("zero", "euclid_over_umax"):
        raise ConfigError("planner.heuristic must be 'zero' or 'euclid_over_umax'")
    _number(p.u_ref, "planner.u_ref", 0, lo_open=True)
    for name in ("start", "goal"):
        v = getattr(p, name)
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise ConfigError(f"planner.{name} must be [x, y] in metres")
        for x in v:
            _number(x, f"planner.{name}", 0)
    e = cfg.evaluation
    if not e.methods:
        raise ConfigError("evaluation.methods must not be empty")
    try:
        cfg.method_list()
    except ValueError as exc:
        raise ConfigError(f"evaluation.methods: {exc}") from exc
    if not e.alphas:
        raise ConfigError("evaluation.alphas must not be empty")
    for a in e.alphas:
        _number(a, "evaluation.alphas", 0, 1)
    return cfg


def from_dict(data):
    return validate(_build(ExperimentConfig, data or {}, ""))


def load_config(path=None):
    """Read a YAML config; with no path, the packaged desk-scale defaults."""
    if path is None:
        text = resources.files("terra_risk").joinpath("data/desk.yaml").read_text()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        text = p.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return from_dict(data)


def default_config():
    return validate(ExperimentConfig())


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
