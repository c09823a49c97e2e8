"""Run configuration: one JSON document with ``data``, ``model``, ``train``
and ``experiment`` sections, every field defaulted.

Unknown keys, wrong types and constraint violations raise
:class:`~sparsedepth.errors.ConfigurationError` naming the offending field,
e.g. ``train.lr``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .model import ModelConfig
from .scene import DataConfig, SceneConfig
from .training import TrainConfig

EXPERIMENT_KINDS = (
    "generate",
    "train",
    "eval",
    "sparsity",
    "intrinsics",
    "flow",
    "ablation",
    "probe",
    "triangulate",
    "dump-filters",
)
MODEL_KINDS = ("global-local", "small-encdec")
VARIANTS = ("full", "no-image-pair", "no-coordconv", "no-global-module", "no-flow")
SWEEP_LEVELS = (1, 4, 16, 64, "dense")


@dataclass
class ModelSection(ModelConfig):
    kind: str = "global-local"

    def __post_init__(self):
        super().__post_init__()
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"model.kind must be one of {MODEL_KINDS}")

    def model_config(self) -> ModelConfig:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(ModelConfig)}
        return ModelConfig(**d)


@dataclass
class ExperimentConfig:
    n_train: int = 2000
    n_test: int = 200
    data_seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    levels: list = field(default_factory=lambda: list(SWEEP_LEVELS))
    models: list[str] = field(default_factory=lambda: list(MODEL_KINDS))
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    intrinsics_maxfrac: float = 0.2
    flow_sigma: float = 0.0
    flow_outlier_frac: float = 0.1
    flow_outlier_mag: float = 10.0
    flow_bins: int = 10
    train_with_corrupted_flow: bool = True
    probe_hidden: int = 256
    probe_iterations: int = 2000
    probe_lr: float = 1e-4
    probe_batch_size: int = 16
    probe_regimes: list[str] = field(default_factory=lambda: ["scratch-mlp", "pretrained-mlp", "scratch-full", "pretrained-full"])
    dump_count: int = 4
    checkpoint: str = ""
    data_dir: str = ""
    pair_index: int = 0
    pair_file: str = ""
    pose_source: str = "gt"
    probe_dir: str = ""

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("experiment.n_train and experiment.n_test must be >= 1")
        if not self.seeds:
            raise ConfigurationError("experiment.seeds must not be empty")
        for lev in self.levels:
            if lev != "dense" and (isinstance(lev, bool) or not isinstance(lev, int) or lev < 1):
                raise ConfigurationError(f"experiment.levels: invalid level {lev!r}")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigurationError(f"experiment.models: unknown model {m!r}")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigurationError(f"experiment.variants: unknown variant {v!r}")
        if not 0.0 <= self.intrinsics_maxfrac < 1.0:
            raise ConfigurationError("experiment.intrinsics_maxfrac must lie in [0, 1)")
        if self.flow_sigma < 0 or self.flow_outlier_mag < 0 or not 0 <= self.flow_outlier_frac <= 1:
            raise ConfigurationError("experiment.flow_*: need sigma >= 0, mag >= 0, frac in [0, 1]")
        if self.flow_bins < 1:
            raise ConfigurationError("experiment.flow_bins must be >= 1")
        if self.pose_source not in ("gt", "probe"):
            raise ConfigurationError("experiment.pose_source must be 'gt' or 'probe'")
        if self.probe_hidden < 1 or self.probe_iterations < 0 or self.probe_batch_size < 1 or not self.probe_lr > 0:
            raise ConfigurationError("experiment.probe_*: invalid probe settings")
        from .probe import REGIMES

        for r in self.probe_regimes:
            if r not in REGIMES:
                raise ConfigurationError(f"experiment.probe_regimes: unknown regime {r!r}")
        if self.dump_count < 0:
            raise ConfigurationError("experiment.dump_count must be >= 0")


SECTIONS = {"data": DataConfig, "model": ModelSection, "train": TrainConfig, "experiment": ExperimentConfig}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        return {name: _to_plain(getattr(self, name)) for name in SECTIONS}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("ascii")).hexdigest()

    def model_config(self) -> ModelConfig:
        return self.model.model_config()

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """New config with dotted-path overrides such as ``{"train.seed": 3}``."""
        d = self.to_dict()
        for path, value in overrides.items():
            section, _, key = path.partition(".")
            if section not in SECTIONS or not key:
                raise ConfigurationError(f"unknown configuration field {path!r}")
            d[section][key] = value
        return config_from_dict(d)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _check_type(name: str, tp, value):
    """Coerce JSON values to the declared field type or raise naming ``name``."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        for a in args:
            try:
                return _check_type(name, a, value)
            except ConfigurationError:
                continue
        raise ConfigurationError(f"{name}: value {value!r} does not match {tp}")
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{name}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{name}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_check_type(f"{name}[{i}]", args[0], v) for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigurationError(f"{name}: expected {len(args)} entries, got {len(value)}")
        return tuple(_check_type(f"{name}[{i}]", a, v) for i, (a, v) in enumerate(zip(args, value)))
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{name}: expected a list, got {value!r}")
        if not args:
            return list(value)
        return [_check_type(f"{name}[{i}]", args[0], v) for i, v in enumerate(value)]
    if tp is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{name}: expected a list, got {value!r}")
        return list(value)
    if dataclasses.is_dataclass(tp):
        return _build(name, tp, value)
    return value


def _build(prefix: str, cls, doc):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{prefix}: expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for k in doc:
        if k not in known:
            raise ConfigurationError(f"unknown configuration field '{prefix}.{k}'")
    kwargs = {k: _check_type(f"{prefix}.{k}", hints[k], v) for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg if msg.startswith(prefix + ".") else f"{prefix}: {msg}") from None


def config_from_dict(doc: dict | None) -> RunConfig:
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration must be a JSON object")
    for k in doc:
        if k not in SECTIONS:
            raise ConfigurationError(f"unknown configuration section '{k}'")
    return RunConfig(**{name: _build(name, cls, doc.get(name)) for name, cls in SECTIONS.items()})


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(doc)


def config_hash(doc_or_cfg) -> str:
    cfg = doc_or_cfg if isinstance(doc_or_cfg, RunConfig) else config_from_dict(doc_or_cfg)
    return cfg.hash


__all__ = [
    "RunConfig",
    "ExperimentConfig",
    "ModelSection",
    "SceneConfig",
    "load_config",
    "config_from_dict",
    "config_hash",
    "EXPERIMENT_KINDS",
    "VARIANTS",
    "SWEEP_LEVELS",
]
