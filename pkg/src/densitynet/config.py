"""Run configuration: every pipeline setting in one JSON document.

``RunConfig()`` carries the full-resolution hyperparameters (512x1024 target,
wide models, 100 epochs); ``RunConfig.desk()`` is the CPU-sized profile used by
default on the command line.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import SynthConfig
from .ensemble import WEIGHT_METRICS
from .loss import LossConfig
from .nn.model import ModelSpec, default_specs, paper_scale_specs
from .preprocess import DESK_TARGET, PAPER_TARGET, AugmentConfig, ClaheParams, PreprocessConfig, ResizeSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    manifest: str = ""  # empty: <out>/data/manifest.csv as written by `synth`
    conditioned: bool = False  # manifest images already went through `preprocess`
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    oversample: bool = True

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class EnsembleConfig:
    metric: str = "f1"
    threshold: float = 0.5

    def __post_init__(self):
        if self.metric not in WEIGHT_METRICS:
            raise ValueError(f"unknown weighting metric {self.metric!r}; choose from {WEIGHT_METRICS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class LossSettings:
    """Serializable part of LossConfig; empty counts mean 'count the training split'."""

    gamma: float = 2.5
    epsilon: float = 0.2
    beta: float = 0.999
    class_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "class_counts", {int(k): int(v) for k, v in self.class_counts.items()})
        LossConfig(self.gamma, self.epsilon, self.beta, dict(self.class_counts))

    def build(self, train_counts=None):
        counts = self.class_counts or dict(train_counts or {})
        return LossConfig(self.gamma, self.epsilon, self.beta, counts)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    dataset: DatasetConfig = DatasetConfig()
    synth: SynthConfig = SynthConfig()
    clahe: ClaheParams = ClaheParams()
    resize: ResizeSpec = ResizeSpec(PAPER_TARGET)
    augment: AugmentConfig = AugmentConfig()
    models: tuple = tuple(paper_scale_specs(PAPER_TARGET))
    loss: LossSettings = LossSettings()
    train: TrainConfig = TrainConfig()
    ensemble: EnsembleConfig = EnsembleConfig()

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ValueError("at least one model spec is required")
        names = [model_name(m) for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError(f"model names must be unique, got {names}")

    @classmethod
    def desk(cls, seed=0):
        """128x256 images, the four mini models, at most 30 epochs."""
        base = cls()
        return replace(base, resize=ResizeSpec(DESK_TARGET), models=tuple(default_specs(DESK_TARGET)),
                       train=replace(base.train, max_epochs=30)).with_seed(seed)

    def paper_scale(self):
        """Switch resolution and model specs to the full-size profile, keeping everything else."""
        return replace(self, resize=ResizeSpec(PAPER_TARGET, self.resize.pad_value),
                       models=tuple(replace(m, seed=self.seed + i) for i, m in enumerate(paper_scale_specs(PAPER_TARGET))),
                       train=replace(self.train, max_epochs=100))

    def with_seed(self, seed):
        """Propagate one global seed to data synthesis, augmentation, training and model init."""
        return replace(self, seed=seed, synth=replace(self.synth, seed=seed),
                       augment=replace(self.augment, seed=seed), train=replace(self.train, seed=seed),
                       models=tuple(replace(m, seed=seed + i) for i, m in enumerate(self.models)))

    @property
    def preprocess(self):
        return PreprocessConfig(self.clahe, self.resize)

    def to_dict(self):
        return _plain(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("run configuration must be a JSON object")
        _reject_unknown(cls, d, "")
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.name == "models":
                if not isinstance(v, list):
                    raise ConfigError("'models' must be a list of model specs")
                kw["models"] = tuple(_section(ModelSpec, m, f"models[{i}]") for i, m in enumerate(v))
            elif is_dataclass(f.default):
                kw[f.name] = _section(type(f.default), v, f.name)
            else:
                kw[f.name] = v
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run configuration: {exc}") from exc

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON configuration: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"))


def model_name(spec):
    return spec.name or spec.family


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _reject_unknown(cls, d, where):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        place = f" in section '{where}'" if where else ""
        raise ConfigError(f"unknown configuration key(s){place}: {', '.join(unknown)}")


def _section(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{where}' must be a JSON object")
    _reject_unknown(cls, d, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{where}': {exc}") from exc


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Apply ``[("loss.gamma", "2.5"), ("models.0.dropout", "0.4"), ...]`` to a config.

    Values are parsed as JSON when possible (numbers, booleans, lists), else kept
    as strings. Unknown keys are rejected with the dotted path named.
    """
    d = config.to_dict()
    for key, raw in overrides:
        parts = key.split(".")
        node = d
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ConfigError(f"override {key!r}: no list entry {part!r}")
                part = int(part)
            elif part not in node:
                raise ConfigError(f"override {key!r}: unknown key {part!r}")
            if last:
                node[part] = _parse_value(raw)
            else:
                node = node[part]
                if not isinstance(node, (dict, list)):
                    raise ConfigError(f"override {key!r}: {'.'.join(parts[:depth + 1])} is not a section")
    return RunConfig.from_dict(d)
