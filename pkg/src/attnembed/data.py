"""Synthetic series, CSV ingestion, chronological splits and supervised pairs."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError

__all__ = [
    "SeriesDataset",
    "SyntheticParams",
    "SplitSpec",
    "SupervisedPairs",
    "gen_synthetic",
    "load_csv",
    "save_csv",
    "chronological_split",
    "make_supervised_pairs",
]


@dataclass
class SeriesDataset:
    """A ``(T_total, M)`` matrix of observations with optional timestamps."""

    values: np.ndarray
    channel_names: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError(f"values must be a non-empty (rows, channels) matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        self.values = values
        if not self.channel_names:
            self.channel_names = [f"x{i}" for i in range(values.shape[1])]
        if len(self.channel_names) != values.shape[1]:
            raise ValueError("channel_names length must equal the channel count")
        if self.timestamps is not None and len(self.timestamps) != values.shape[0]:
            raise ValueError("timestamps length must equal the row count")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesDataset":
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return SeriesDataset(self.values[start:stop].copy(), list(self.channel_names), ts)


@dataclass
class SyntheticParams:
    n_components: int = 10
    n_steps: int = 2000
    seed: int = 0
    dt: float = 0.05
    # None means 0.3 x std of the noiseless series
    noise_std: float | None = None
    amplitude_range: tuple[float, float] = (0.5, 2.0)
    omega_range: tuple[float, float] = (0.1, 1.0)
    phase_range: tuple[float, float] = (0.0, 2 * math.pi)
    cubic_scale: tuple[float, float, float, float] = (1e-9, 1e-6, 1e-3, 1.0)
    # explicit per-component draws override sampling when given
    amplitudes: Sequence[float] | None = None
    omegas: Sequence[float] | None = None
    phases: Sequence[float] | None = None
    cubic: Sequence[Sequence[float]] | None = None

    def validate(self) -> None:
        if self.n_components < 1:
            raise ConfigError("n_components", "must be >= 1")
        if self.n_steps < 1:
            raise ConfigError("n_steps", "must be >= 1")
        if self.noise_std is not None and self.noise_std < 0:
            raise ConfigError("noise_std", "must be >= 0")


def _draw_components(p: SyntheticParams, rng: np.random.Generator):
    k = p.n_components
    amp = np.asarray(p.amplitudes, float) if p.amplitudes is not None else rng.uniform(*p.amplitude_range, size=k)
    omg = np.asarray(p.omegas, float) if p.omegas is not None else rng.uniform(*p.omega_range, size=k)
    phs = np.asarray(p.phases, float) if p.phases is not None else rng.uniform(*p.phase_range, size=k)
    if p.cubic is not None:
        cub = np.asarray(p.cubic, float).reshape(k, 4)
    else:
        scale = np.asarray(p.cubic_scale)
        cub = rng.uniform(-1.0, 1.0, size=(k, 4)) * scale
    return amp, omg, phs, cub


def gen_synthetic(kind: str, p: SyntheticParams | None = None) -> SeriesDataset:
    """Sum of sinusoids and cubics sampled at ``x = t * dt``.

    ``f1`` is noiseless; ``f2`` adds Gaussian noise. Component draws and the
    noise come from separate child streams of one seed, so ``f1`` and ``f2``
    share the same underlying signal for a given seed.
    """
    p = p or SyntheticParams()
    if kind not in ("f1", "f2"):
        raise ValueError(f"kind must be 'f1' or 'f2', got {kind!r}")
    if p.n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    p.validate()
    comp_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(p.seed).spawn(2))
    amp, omg, phs, cub = _draw_components(p, comp_rng)

    x = np.arange(p.n_steps) * p.dt
    signal = (amp[:, None] * np.sin(omg[:, None] * x[None, :] + phs[:, None])).sum(axis=0)
    a, b, c, d = cub.T
    signal = signal + (a[:, None] * x**3 + b[:, None] * x**2 + c[:, None] * x + d[:, None]).sum(axis=0)

    if kind == "f2":
        sigma = 0.3 * float(np.std(signal)) if p.noise_std is None else float(p.noise_std)
        if sigma > 0:
            signal = signal + noise_rng.normal(0.0, sigma, size=p.n_steps)
    return SeriesDataset(signal[:, None], [kind], [str(t) for t in range(p.n_steps)])


def load_csv(path: str | Path) -> SeriesDataset:
    """Read a header + rows CSV whose first column is a timestamp."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = rows[0]
    if len(header) < 2:
        raise ParseError("header needs a timestamp column and at least one value column", line=1)
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r]
    if not body:
        raise ParseError("no data rows", line=2)
    n_cols = len(header)
    values = np.empty((len(body), n_cols - 1))
    stamps = []
    for j, (lineno, row) in enumerate(body):
        if len(row) != n_cols:
            raise ParseError(f"expected {n_cols} fields, found {len(row)}", line=lineno)
        stamps.append(row[0])
        for k, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r} in column {header[k + 1]!r}", line=lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite cell {cell!r} in column {header[k + 1]!r}", line=lineno)
            values[j, k] = v
    return SeriesDataset(values, [h.strip() for h in header[1:]], stamps)


def save_csv(ds: SeriesDataset, path: str | Path, timestamp_name: str = "date") -> None:
    stamps = ds.timestamps if ds.timestamps is not None else [str(i) for i in range(ds.n_rows)]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([timestamp_name, *ds.channel_names])
        for t, row in zip(stamps, ds.values):
            w.writerow([t, *(repr(float(v)) for v in row)])


@dataclass
class SplitSpec:
    """Either ``ratios`` (train, val, test) or ``borders`` (two fractions or row indices)."""

    ratios: tuple[float, float, float] | None = (0.6, 0.2, 0.2)
    borders: tuple[float, float] | None = None
    lookback_warmup: bool = True

    def cut_points(self, n: int) -> tuple[int, int]:
        if self.borders is not None:
            b1, b2 = self.borders
            if all(isinstance(b, float) and 0 < b < 1 for b in (b1, b2)):
                return int(round(b1 * n)), int(round(b2 * n))
            return int(b1), int(b2)
        if self.ratios is None:
            raise ValueError("SplitSpec needs ratios or borders")
        r = np.asarray(self.ratios, dtype=float)
        if np.any(r <= 0) or abs(r.sum() - 1.0) > 1e-9:
            raise ValueError(f"ratios must be positive and sum to 1, got {self.ratios}")
        n_train = int(round(r[0] * n))
        n_val = int(round(r[1] * n))
        return n_train, n_train + n_val


@dataclass
class Segment:
    """One split: ``data`` rows, the first ``context`` of which are warmup only."""

    data: SeriesDataset
    context: int
    start: int  # index of data row 0 in the original series

    @property
    def n_target_rows(self) -> int:
        return self.data.n_rows - self.context


def chronological_split(ds: SeriesDataset, spec: SplitSpec | None = None, lookback: int = 0):
    """Split into contiguous train/val/test segments.

    With ``lookback_warmup`` the val and test segments are each prefixed with the
    last ``lookback`` rows of the preceding segment; those rows only serve as
    input context.
    """
    spec = spec or SplitSpec()
    n = ds.n_rows
    c1, c2 = spec.cut_points(n)
    if not (0 < c1 < c2 < n):
        raise ValueError(f"split of {n} rows at {c1}, {c2} leaves an empty segment")
    warm = lookback if spec.lookback_warmup else 0
    if warm > c1:
        raise ValueError(f"lookback warmup {warm} exceeds the train segment length {c1}")
    train = Segment(ds.slice(0, c1), 0, 0)
    val = Segment(ds.slice(c1 - warm, c2), warm, c1 - warm)
    test = Segment(ds.slice(c2 - warm, n), warm, c2 - warm)
    return train, val, test


@dataclass
class SupervisedPairs:
    inputs: np.ndarray  # (count, L)
    targets: np.ndarray  # (count, T)
    starts: np.ndarray  # input start index per pair
    warning: bool = False

    def __len__(self) -> int:
        return len(self.inputs)

    def __iter__(self):
        return iter(zip(self.inputs, self.targets))


def make_supervised_pairs(u, lookback: int, horizon: int, stride: int = 1, first_target: int = 0) -> SupervisedPairs:
    """Slide a ``lookback + horizon`` window over ``u`` in chronological order.

    ``first_target`` drops pairs whose target would start before that index,
    which is how warmup rows are kept out of the targets.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    count = max(0, (n - lookback - horizon) // stride + 1)
    starts = np.arange(count) * stride
    starts = starts[starts + lookback >= first_target]
    if len(starts) == 0:
        warnings.warn(f"series of length {n} yields no (lookback={lookback}, horizon={horizon}) pairs")
        empty = np.empty((0,) + u.shape[1:])
        return SupervisedPairs(empty.reshape((0, lookback) + u.shape[1:]), empty.reshape((0, horizon) + u.shape[1:]), starts, True)
    idx_in = starts[:, None] + np.arange(lookback)[None, :]
    idx_out = starts[:, None] + lookback + np.arange(horizon)[None, :]
    return SupervisedPairs(u[idx_in], u[idx_out], starts, False)
