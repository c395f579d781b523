"""TOML run configuration.

One file drives ``synth``, ``teach``, ``distill``, ``eval`` and ``sweep``::

    seed = 0
    out = "runs/demo"

    [data]            # csv = "path.csv" to use recorded data instead of [synth]
    scaler = "robust" # or "minmax"
    val_fraction = 0.3

    [synth]           # SynthSpec fields
    [teacher]         # ModelConfig fields
    [student]         # ModelConfig fields
    [teacher_train]   # TrainConfig fields
    [distill]         # DistillConfig fields
    [sweep]           # width = [..], depth = [..] multipliers

Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import (
    CsvSchema,
    DataError,
    ScalerParams,
    SynthSpec,
    WindowSet,
    fit_scaler,
    load_csv_dataset,
    split_by_subject,
    synth_generate,
    synth_windows,
    window_streams,
)
from .distill import DistillConfig, TrainConfig
from .nn import ModelConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class DataConfig:
    csv: str | None = None
    scaler: str = "robust"
    centered: bool = False
    val_fraction: float = 0.3
    # window / hop default to one synthetic window, non-overlapping
    window: int | None = None
    hop: int | None = None
    n_channels: int | None = None
    n_classes: int | None = None


@dataclass
class SweepConfig:
    width: list[float] = field(default_factory=lambda: [0.5, 1.0])
    depth: list[float] = field(default_factory=lambda: [1.0])


def _default_teacher() -> ModelConfig:
    return ModelConfig(width=32, depth=3)


def _default_student() -> ModelConfig:
    return ModelConfig(width=8, depth=2)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    teacher: ModelConfig = field(default_factory=_default_teacher)
    student: ModelConfig = field(default_factory=_default_student)
    teacher_train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def seeded(self, seed: int) -> "RunConfig":
        """Copy with ``seed`` pushed into every RNG consumer."""
        return replace(
            self,
            seed=seed,
            synth=replace(self.synth, seed=seed),
            teacher_train=replace(self.teacher_train, seed=seed),
            distill=replace(self.distill, seed=seed),
        )

    def validate(self):
        checks = [
            ("synth", self.synth.validate),
            ("teacher", self.teacher.validate),
            ("student", self.student.validate),
            ("distill", self.distill.validate),
        ]
        for name, fn in checks:
            try:
                fn()
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.data.scaler not in ("robust", "minmax"):
            raise ConfigError(f"data.scaler: unknown scaler {self.data.scaler!r}")
        if not 0 < self.data.val_fraction < 1:
            raise ConfigError("data.val_fraction: must lie strictly between 0 and 1")
        if self.data.csv is not None and not Path(self.data.csv).is_file():
            raise ConfigError(f"data.csv: dataset file {self.data.csv!r} does not exist")
        for key in ("epochs", "batch_size"):
            if getattr(self.teacher_train, key) < 1:
                raise ConfigError(f"teacher_train.{key}: must be positive")
        if self.distill.batch_size < 1:
            raise ConfigError("distill.batch_size: must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def n_channels(self) -> int:
        return self.data.n_channels or self.synth.n_channels

    @property
    def n_classes(self) -> int:
        return self.data.n_classes or self.synth.n_classes

    @property
    def window(self) -> int:
        return self.data.window or self.synth.window_length

    @property
    def hop(self) -> int:
        return self.data.hop or self.window


def _build(cls, table, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SECTIONS = {
    "data": DataConfig,
    "synth": SynthSpec,
    "teacher": ModelConfig,
    "student": ModelConfig,
    "teacher_train": TrainConfig,
    "distill": DistillConfig,
    "sweep": SweepConfig,
}


def config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    unknown = sorted(set(d) - set(_SECTIONS) - {"seed", "out"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    kwargs = {k: _build(cls, d[k], k) for k, cls in _SECTIONS.items() if k in d}
    if base_dir is not None and "data" in kwargs and kwargs["data"].csv is not None:
        p = Path(kwargs["data"].csv)
        if not p.is_absolute():
            kwargs["data"].csv = str(base_dir / p)
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    cfg = RunConfig(out=str(d.get("out", RunConfig.out)), **kwargs)
    return cfg.seeded(seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


def load_windows(cfg: RunConfig) -> WindowSet:
    """Raw, unscaled windows described by ``cfg``."""
    if cfg.data.csv is None:
        spec = cfg.synth
        if cfg.data.window is None and cfg.data.hop is None:
            return synth_windows(spec)
        return window_streams(synth_generate(spec), cfg.window, cfg.hop)
    if not Path(cfg.data.csv).is_file():
        raise ConfigError(f"data.csv: dataset file {cfg.data.csv!r} does not exist")
    streams = load_csv_dataset(cfg.data.csv, CsvSchema(cfg.n_channels, cfg.n_classes))
    return window_streams(streams, cfg.window, cfg.hop)


def prepare_splits(cfg: RunConfig, scaler: ScalerParams | None = None, windows: WindowSet | None = None):
    """Subject-wise split, then scale with ``scaler`` or one fitted on train."""
    windows = load_windows(cfg) if windows is None else windows
    if len(windows) == 0:
        raise DataError("dataset produced no windows")
    train, val = split_by_subject(windows, cfg.data.val_fraction, cfg.seed)
    if scaler is None:
        scaler = fit_scaler(cfg.data.scaler, train.X, centered=cfg.data.centered)
    return train.scaled(scaler), val.scaled(scaler), scaler
