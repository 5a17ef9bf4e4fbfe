"""Strictly validated experiment configuration (JSON)."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .sampler import SamplerConfig
from .schedule import ScheduleParams

DENOISER_KINDS = ("oracle", "gaussian", "linear")
SWEEP_STEPS = (4, 8, 16, 32, 64)


@dataclass
class DataSection:
    manifest: str | None = None
    synthetic: bool = False
    out: str = "runs/data"
    hours: float = 10.0
    test_hours: float | None = None  # default: hours / 10
    test_mixtures: int | None = None
    snr_mode: str = "downmix"


@dataclass
class FoldSection:
    n: int = 1
    fold: int = 1


@dataclass
class DenoiserSection:
    kind: str = "linear"
    model: str | None = None
    sigma_prior: float = 0.1
    n_sigma_bins: int = 32
    n_time_samples: int = 16
    per_frequency: bool = True


@dataclass
class SweepSection:
    steps: list[int] = field(default_factory=lambda: list(SWEEP_STEPS))
    samplers: list[str] = field(default_factory=lambda: ["pc", "edm"])


@dataclass
class ExperimentConfig:
    seed: int = 0
    schedule: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    data: DataSection = field(default_factory=DataSection)
    folds: FoldSection = field(default_factory=FoldSection)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    pesq_command: str | None = None

    def schedule_params(self) -> ScheduleParams:
        return ScheduleParams(**self.schedule)

    def sampler_config(self, **override) -> SamplerConfig:
        return SamplerConfig(**{"seed": self.seed, **self.sampler, **override})

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def _coerce(value, where: str):
    if isinstance(value, str) and value.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(value, dict):
        return {k: _coerce(v, f"{where}.{k}") for k, v in value.items()}
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SCHEDULE_KEYS = {f.name for f in dataclasses.fields(ScheduleParams)}
_SAMPLER_KEYS = {f.name for f in dataclasses.fields(SamplerConfig)} - {"seed"}


def config_from_dict(raw: dict, base_dir: Path | None = None, check_paths: bool = True) -> ExperimentConfig:
    """Validate ``raw`` and resolve relative paths against ``base_dir``."""
    raw = _coerce(dict(raw), "config")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    for section, keys in (("schedule", _SCHEDULE_KEYS), ("sampler", _SAMPLER_KEYS)):
        extra = set(raw.get(section, {})) - keys
        if extra:
            raise ConfigError(f"config.{section}: unknown keys {sorted(extra)}")
    cfg = ExperimentConfig(
        seed=raw.get("seed", 0),
        schedule=raw.get("schedule", {}),
        sampler=raw.get("sampler", {}),
        data=_build(DataSection, raw.get("data", {}), "config.data"),
        folds=_build(FoldSection, raw.get("folds", {}), "config.folds"),
        denoiser=_build(DenoiserSection, raw.get("denoiser", {}), "config.denoiser"),
        sweep=_build(SweepSection, raw.get("sweep", {}), "config.sweep"),
        pesq_command=raw.get("pesq_command"),
    )
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("config.seed must be a non-negative integer")
    if cfg.folds.n not in (1, 4) or not 1 <= cfg.folds.fold <= 5:
        raise ConfigError("config.folds: n must be 1 or 4 and fold in 1..5")
    if cfg.denoiser.kind not in DENOISER_KINDS:
        raise ConfigError(f"config.denoiser.kind must be one of {DENOISER_KINDS}")
    if not set(cfg.sweep.samplers) <= {"pc", "edm"} or any(int(s) < 1 for s in cfg.sweep.steps):
        raise ConfigError("config.sweep: samplers must be pc/edm and steps positive")
    cfg.schedule_params()
    cfg.sampler_config()
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for holder, attr in ((cfg.data, "manifest"), (cfg.denoiser, "model")):
        value = getattr(holder, attr)
        if value is not None:
            p = Path(value)
            p = p if p.is_absolute() else base / p
            setattr(holder, attr, str(p))
    if check_paths and cfg.data.manifest is not None and not Path(cfg.data.manifest).is_file():
        raise ConfigError(f"config.data.manifest: {cfg.data.manifest} does not exist")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return config_from_dict(raw, path.parent)


def worker_count(default: int = 1) -> int:
    """Worker pool size from ``DIFFSE_WORKERS``."""
    value = os.environ.get("DIFFSE_WORKERS")
    if value is None:
        return default
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"DIFFSE_WORKERS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("DIFFSE_WORKERS must be >= 1")
    return n
