"""Run configuration: a YAML file with a fixed schema. Unknown keys are errors."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import SessPropError
from .ensemble import DEFAULT_ALPHA_GRID, DEFAULT_W2_GRID
from .ingest import PRESETS, ColumnMapping, PreprocessConfig
from .propensity import HISTORICAL, METHODS
from .recommenders.gru4rec import Gru4RecConfig
from .recommenders.sknn import SknnConfig

OUTPUT_DIR_ENV = "SESSPROP_OUTPUT_DIR"


class ConfigError(SessPropError):
    pass


@dataclass(frozen=True)
class DatasetBlock:
    paths: tuple[str, ...] = ()
    preset: str | None = "session-rec"
    columns: ColumnMapping | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def mapping(self) -> ColumnMapping:
        if self.columns is not None:
            return self.columns
        if self.preset is None:
            return ColumnMapping()
        return PRESETS[self.preset]


@dataclass(frozen=True)
class PropensityBlock:
    gamma: float | str = "fit"  # a number fixes gamma, "fit" estimates it
    histogram_bins: int = 50


@dataclass(frozen=True)
class ModelsBlock:
    sknn: SknnConfig = field(default_factory=SknnConfig)
    gru4rec: Gru4RecConfig = field(default_factory=Gru4RecConfig)


@dataclass(frozen=True)
class EnsembleBlock:
    stratification: str = HISTORICAL
    threshold_percentile: float = 10.0
    threshold: float | None = None  # overrides threshold_percentile when set
    w2_grid: tuple[float, ...] = DEFAULT_W2_GRID
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    validation_fraction: float = 0.1


@dataclass(frozen=True)
class EvaluationBlock:
    n: int = 20
    percentile_grid: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0)
    methods: tuple[str, ...] = METHODS
    robustness_fraction: float = 10.0
    models: tuple[str, ...] = ("sknn", "gru4rec")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    propensity: PropensityBlock = field(default_factory=PropensityBlock)
    models: ModelsBlock = field(default_factory=ModelsBlock)
    ensemble: EnsembleBlock = field(default_factory=EnsembleBlock)
    evaluation: EvaluationBlock = field(default_factory=EvaluationBlock)
    seed: int = 0
    output_dir: str = "sessprop-out"

    def resolved(self) -> dict:
        """The config echoed into artifacts. ``output_dir`` is left out so that
        identical runs written to different places stay byte-identical."""
        data = _to_plain(self)
        data.pop("output_dir")
        data["dataset"]["columns"] = _to_plain(self.dataset.mapping())
        data["models"]["gru4rec"]["seed"] = self.seed
        return data

    def fingerprint(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            value = _build(sub, value, f"{where}.{name}") if value is not None else None
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except SessPropError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    (RunConfig, "dataset"): DatasetBlock,
    (RunConfig, "propensity"): PropensityBlock,
    (RunConfig, "models"): ModelsBlock,
    (RunConfig, "ensemble"): EnsembleBlock,
    (RunConfig, "evaluation"): EvaluationBlock,
    (DatasetBlock, "columns"): ColumnMapping,
    (DatasetBlock, "preprocess"): PreprocessConfig,
    (ModelsBlock, "sknn"): SknnConfig,
    (ModelsBlock, "gru4rec"): Gru4RecConfig,
}


def _validate(cfg: RunConfig) -> None:
    if cfg.dataset.preset is not None and cfg.dataset.preset not in PRESETS:
        raise ConfigError(f"dataset.preset: unknown preset {cfg.dataset.preset!r}; known: {sorted(PRESETS)}")
    g = cfg.propensity.gamma
    if isinstance(g, str):
        if g != "fit":
            raise ConfigError("propensity.gamma must be a number or 'fit'")
    elif isinstance(g, bool) or not isinstance(g, (int, float)) or g < 0:
        raise ConfigError("propensity.gamma must be a non-negative number or 'fit'")
    for m in cfg.evaluation.methods:
        if m not in METHODS:
            raise ConfigError(f"evaluation.methods: unknown method {m!r}")
    if cfg.ensemble.stratification not in METHODS:
        raise ConfigError(f"ensemble.stratification: unknown method {cfg.ensemble.stratification!r}")
    if cfg.evaluation.n < 1:
        raise ConfigError("evaluation.n must be >= 1")
    for x in cfg.evaluation.percentile_grid:
        if not 0 <= x <= 100:
            raise ConfigError(f"evaluation.percentile_grid: {x} outside [0, 100]")
    if not 0 < cfg.ensemble.validation_fraction < 1:
        raise ConfigError("ensemble.validation_fraction must lie in (0, 1)")
    for w in cfg.ensemble.w2_grid:
        if not 0 <= w <= 1:
            raise ConfigError(f"ensemble.w2_grid: {w} outside [0, 1]")


def config_from_dict(data: dict | None) -> RunConfig:
    gru = ((data or {}).get("models") or {}).get("gru4rec") or {}
    if isinstance(gru, dict) and "seed" in gru:
        raise ConfigError("config.models.gru4rec: 'seed' is set by the top-level 'seed' key")
    cfg = _build(RunConfig, data or {}, "config")
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    cfg = config_from_dict(data)
    if os.environ.get(OUTPUT_DIR_ENV):
        cfg = dataclasses.replace(cfg, output_dir=os.environ[OUTPUT_DIR_ENV])
    # relative dataset paths are resolved against the config file's directory
    paths = tuple(str((path.parent / p)) if not Path(p).is_absolute() else p for p in cfg.dataset.paths)
    return dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, paths=paths))
