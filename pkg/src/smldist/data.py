"""Sensor streams, windowing, scaling, subject-wise splits and synthetic HAR data.

CSV layout (UTF-8, comma separated, one row per sample, sorted by subject
then time)::

    subject,label,t,ch_0,ch_1,...,ch_{C-1}
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input data or data that does not fit the expected schema."""


@dataclass
class Stream:
    subject: int
    values: np.ndarray  # (C, N)
    labels: np.ndarray  # (N,)
    t: np.ndarray  # (N,)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]


@dataclass
class SensorWindow:
    values: np.ndarray  # (C, L)
    label: int
    subject: int


@dataclass
class WindowSet:
    """Windows stacked into arrays: X (n, C, L), y (n,), subjects (n,)."""

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_windows(cls, windows: list[SensorWindow]) -> "WindowSet":
        if not windows:
            raise DataError("no windows")
        return cls(
            np.stack([w.values for w in windows]),
            np.array([w.label for w in windows], dtype=np.int64),
            np.array([w.subject for w in windows], dtype=np.int64),
        )

    def subset(self, mask) -> "WindowSet":
        return WindowSet(self.X[mask], self.y[mask], self.subjects[mask])

    def scaled(self, params: "ScalerParams") -> "WindowSet":
        return WindowSet(params.apply(self.X), self.y, self.subjects)


# ---------------------------------------------------------------------------
# windowing and splitting


def _majority(labels: np.ndarray) -> int:
    values, first, counts = np.unique(labels, return_index=True, return_counts=True)
    best = counts == counts.max()
    # ties go to the label that shows up first inside the window
    return int(values[best][np.argmin(first[best])])


def window_signal(stream: Stream, win: int, hop: int | None = None) -> list[SensorWindow]:
    hop = max(1, win // 2) if hop is None else hop
    if win < 1 or hop < 1:
        raise ValueError("window length and hop must be positive")
    n = len(stream)
    if win > n:
        return []
    return [
        SensorWindow(stream.values[:, s : s + win].copy(), _majority(stream.labels[s : s + win]), stream.subject)
        for s in range(0, n - win + 1, hop)
    ]


def window_streams(streams: dict[int, Stream], win: int, hop: int | None = None) -> WindowSet:
    windows = []
    for subject in sorted(streams):
        windows.extend(window_signal(streams[subject], win, hop))
    return WindowSet.from_windows(windows)


def n_validation_subjects(n_subjects: int, val_fraction: float) -> int:
    # tolerance guards against 0.3 * 10 == 3.0000000000000004
    n_val = math.ceil(val_fraction * n_subjects - 1e-9)
    return min(max(n_val, 1), n_subjects - 1)


def split_subjects(subjects, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    unique = sorted(set(int(s) for s in subjects))
    if len(unique) < 2:
        raise DataError("subject-wise split needs at least two subjects")
    order = np.random.default_rng(seed).permutation(len(unique))
    n_val = n_validation_subjects(len(unique), val_fraction)
    val = sorted(unique[i] for i in order[:n_val])
    train = sorted(unique[i] for i in order[n_val:])
    return train, val


def split_by_subject(windows: WindowSet, val_fraction: float = 0.3, seed: int = 0) -> tuple[WindowSet, WindowSet]:
    train_ids, val_ids = split_subjects(windows.subjects, val_fraction, seed)
    is_val = np.isin(windows.subjects, val_ids)
    return windows.subset(~is_val), windows.subset(is_val)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalerParams:
    """Per-channel scaling statistics fitted on the training split.

    ``kind`` is "robust" (q1, q3, iqr, lower, upper) or "minmax" (min, max).
    """

    kind: str
    stats: dict[str, list[float]]
    centered: bool = False
    degenerate: list[bool] = field(default_factory=list)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Scale ``x`` with channels on axis -2 (shape (..., C, L))."""
        n = len(next(iter(self.stats.values())))
        x = np.asarray(x)
        if (x.ndim >= 2 and x.shape[-2] != n) or (x.ndim == 1 and n != 1):
            raise DataError(f"scaler fitted on {n} channel(s), data has shape {x.shape}")
        if self.kind == "robust":
            return robust_scale_apply(x, self)
        if self.kind == "minmax":
            return minmax_scale(x, self)
        raise ValueError(f"unknown scaler kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(**d)


def _per_channel(x: np.ndarray) -> np.ndarray:
    """(n, C, L) windows or (C, N) samples -> (C, samples)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.transpose(1, 0, 2).reshape(x.shape[1], -1)
    if x.ndim == 2:
        return x
    if x.ndim == 1:
        return x[None, :]
    raise DataError(f"cannot read channels from array of shape {x.shape}")


def _col(params: ScalerParams, key: str) -> np.ndarray:
    return np.asarray(params.stats[key], dtype=np.float64)[:, None]


def robust_scale_fit(train: np.ndarray, allow_degenerate: bool = False) -> ScalerParams:
    samples = _per_channel(train)
    if samples.shape[1] < 4:
        raise DataError("robust scaling needs at least 4 samples per channel")
    q1, q3 = np.quantile(samples, [0.25, 0.75], axis=1, method="linear")
    iqr = q3 - q1
    degenerate = iqr <= 0
    if degenerate.any() and not allow_degenerate:
        raise DataError(f"constant channel(s) {np.flatnonzero(degenerate).tolist()}: IQR is zero")
    stats = {
        "q1": q1.tolist(),
        "q3": q3.tolist(),
        "iqr": iqr.tolist(),
        "lower": (q1 - 1.5 * iqr).tolist(),
        "upper": (q3 + 1.5 * iqr).tolist(),
    }
    return ScalerParams("robust", stats, degenerate=degenerate.tolist())


def _expand(col: np.ndarray, x: np.ndarray) -> np.ndarray:
    # channel stats broadcast against (..., C, L)
    return col if x.ndim >= 2 else col[:, 0]


def robust_scale_apply(x: np.ndarray, params: ScalerParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi, iqr = (_expand(_col(params, k), x) for k in ("lower", "upper", "iqr"))
    safe = np.where(iqr > 0, iqr, 1.0)
    out = np.clip(x, lo, hi) / (4.0 * safe)
    return np.where(iqr > 0, out, 0.0)


def minmax_fit(train: np.ndarray, centered: bool = False) -> ScalerParams:
    samples = _per_channel(train)
    lo, hi = samples.min(axis=1), samples.max(axis=1)
    if np.any(hi <= lo):
        raise DataError(f"constant channel(s) {np.flatnonzero(hi <= lo).tolist()}: max == min")
    return ScalerParams("minmax", {"min": lo.tolist(), "max": hi.tolist()}, centered=centered)


def minmax_scale(x: np.ndarray, params: ScalerParams) -> np.ndarray:
    """``clip(x, min, max) / (max - min)``; subtracts ``min`` first when centered."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = (_expand(_col(params, k), x) for k in ("min", "max"))
    if np.any(hi <= lo):
        raise DataError("min-max scaling needs max > min")
    clipped = np.clip(x, lo, hi)
    if params.centered:
        clipped = clipped - lo
    return clipped / (hi - lo)


def fit_scaler(kind: str, train: np.ndarray, centered: bool = False, allow_degenerate: bool = False) -> ScalerParams:
    if kind == "robust":
        return robust_scale_fit(train, allow_degenerate)
    if kind == "minmax":
        return minmax_fit(train, centered)
    raise ValueError(f"unknown scaler {kind!r}")


# ---------------------------------------------------------------------------
# synthetic data


def default_frequencies(n_classes: int) -> list[float]:
    return [0.6 + 0.4 * k for k in range(n_classes)]


@dataclass
class SynthSpec:
    """Sinusoidal stand-in for a HAR corpus.

    Each subject's stream is a shuffled sequence of activity segments, one
    window long each. Per channel, class ``k`` is
    ``A * sin(2 pi f_k (1 + jitter_s) t + phase_s) + slope * tau + noise``
    where ``t`` is stream time and ``tau`` is time since the segment began.
    """

    n_classes: int = 6
    frequencies: list[float] | None = None
    slope: float = 0.0
    noise_sigma: float = 0.3
    sample_rate: float = 50.0
    window_seconds: float = 5.0
    windows_per_class: int = 12
    n_subjects: int = 5
    n_channels: int = 3
    amplitude: float = 1.0
    subject_freq_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frequencies is None:
            self.frequencies = default_frequencies(self.n_classes)
        self.frequencies = [float(f) for f in self.frequencies]

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_seconds))

    def validate(self):
        if len(self.frequencies) != self.n_classes:
            raise ValueError("need exactly one frequency per class")
        if len(set(self.frequencies)) != len(self.frequencies):
            raise ValueError("class frequencies must be pairwise distinct")
        if self.n_subjects < 1 or self.windows_per_class < 1 or self.n_channels < 1:
            raise ValueError("subject, window and channel counts must be positive")
        if self.window_length < 1:
            raise ValueError("window must hold at least one sample")

    def to_dict(self) -> dict:
        return asdict(self)


def synth_generate(spec: SynthSpec) -> dict[int, Stream]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    L = spec.window_length
    freqs = np.asarray(spec.frequencies)
    streams = {}
    for s in range(spec.n_subjects):
        order = rng.permutation(np.repeat(np.arange(spec.n_classes), spec.windows_per_class))
        phase = rng.uniform(0, 2 * np.pi)
        scale = 1.0 + spec.subject_freq_jitter * rng.standard_normal()
        n = len(order) * L
        t = np.arange(n) / spec.sample_rate
        labels = np.repeat(order, L)
        tau = np.tile(np.arange(L) / spec.sample_rate, len(order))
        f = freqs[labels] * scale
        values = np.tile(spec.amplitude * np.sin(2 * np.pi * f * t + phase) + spec.slope * tau, (spec.n_channels, 1))
        values = values + spec.noise_sigma * rng.standard_normal(values.shape)
        streams[s] = Stream(s, values, labels.astype(np.int64), t)
    return streams


def synth_windows(spec: SynthSpec) -> WindowSet:
    return window_streams(synth_generate(spec), spec.window_length, spec.window_length)


# ---------------------------------------------------------------------------
# CSV


@dataclass
class CsvSchema:
    n_channels: int
    n_classes: int


def write_csv(streams: dict[int, Stream], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_channels = next(iter(streams.values())).n_channels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "label", "t", *[f"ch_{c}" for c in range(n_channels)]])
        for subject in sorted(streams):
            st = streams[subject]
            for j in range(len(st)):
                w.writerow([subject, int(st.labels[j]), repr(float(st.t[j])), *[repr(float(v)) for v in st.values[:, j]]])
    return path


def load_csv_dataset(path, schema: CsvSchema) -> dict[int, Stream]:
    path = Path(path)
    expected = ["subject", "label", "t", *[f"ch_{c}" for c in range(schema.n_channels)]]
    rows: dict[int, list] = {}
    order: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header != expected:
            missing = [h for h in expected if h not in header]
            raise DataError(f"{path}: header {header} does not match schema {expected} (missing {missing})")
        prev_t = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                subject, label = int(row[0]), int(row[1])
                t = float(row[2])
                vals = [float(v) for v in row[3:]]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: malformed row ({e})") from None
            if not (0 <= label < schema.n_classes):
                raise DataError(f"{path}:{lineno}: unknown label {label}")
            if subject not in rows:
                rows[subject] = []
                order.append(subject)
                prev_t = None
            elif order[-1] != subject:
                raise DataError(f"{path}:{lineno}: rows for subject {subject} are not contiguous")
            if prev_t is not None and t <= prev_t:
                raise DataError(f"{path}:{lineno}: time {t} does not increase within subject {subject}")
            prev_t = t
            rows[subject].append((label, t, vals))
    if not rows:
        raise DataError(f"{path}: no data rows")
    streams = {}
    for subject, items in rows.items():
        labels = np.array([r[0] for r in items], dtype=np.int64)
        t = np.array([r[1] for r in items])
        values = np.array([r[2] for r in items]).T
        streams[subject] = Stream(subject, values, labels, t)
    return streams
