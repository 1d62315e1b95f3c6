"""Process/quality time series: loading, lag embedding, scaling, splitting
and a synthetic stand-in for the sulfur recovery unit data."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DataError, DimensionError, DomainError, SchemaError

SRU_PROCESS = ("x1", "x2", "x3", "x4", "x5")
SRU_QUALITY = ("y1", "y2")
SRU_UNITS = {
    "x1": "m3/s", "x2": "m3/s", "x3": "m3/s", "x4": "m3/s", "x5": "m3/s",
    "y1": "mol/m3", "y2": "mol/m3",
}
DEFAULT_LAGS = 10
NULL_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass
class RawSeries:
    """Time-ordered samples: ``X`` holds process columns, ``Y`` quality columns."""

    X: np.ndarray
    Y: np.ndarray
    process: tuple[str, ...] = SRU_PROCESS
    quality: tuple[str, ...] = SRU_QUALITY
    time: np.ndarray | None = None
    dropped: int = 0
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.time is None:
            self.time = np.arange(len(self.X), dtype=np.float64)
        if len(self.X) != len(self.Y) or len(self.X) != len(self.time):
            raise DimensionError(f"{len(self.X)} process rows but {len(self.Y)} quality rows")
        if len(self.time) > 1 and np.any(np.diff(self.time) <= 0):
            raise DataError("time index is not strictly increasing")

    def __len__(self) -> int:
        return len(self.X)


@dataclass
class LaggedDataset:
    """``X[i]`` is ``[x_1(t), ..., x_1(t-L+1), ..., x_D(t), ..., x_D(t-L+1)]``
    for source time ``times[i]``; ``Y[i]`` are the quality values at that time."""

    X: np.ndarray
    Y: np.ndarray
    times: np.ndarray
    lags: int = DEFAULT_LAGS

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, rows) -> "LaggedDataset":
        return LaggedDataset(self.X[rows], self.Y[rows], self.times[rows], self.lags)

    def select_objectives(self, ks: Sequence[int]) -> "LaggedDataset":
        return LaggedDataset(self.X, self.Y[:, list(ks)], self.times, self.lags)


def load_csv(path, process: Sequence[str] = SRU_PROCESS, quality: Sequence[str] = SRU_QUALITY,
             delimiter: str = ",", time_column: str | None = None) -> RawSeries:
    """Read a headered delimited file; rows containing nulls are dropped and counted."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    wanted = list(process) + list(quality) + ([time_column] if time_column else [])
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        for name in wanted:
            if name not in header:
                raise SchemaError(f"missing column {name!r} in {path}")
        idx = [header.index(name) for name in wanted]
        rows, dropped = [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            cells = [rec[i].strip() if i < len(rec) else "" for i in idx]
            if any(c.lower() in NULL_TOKENS for c in cells):
                dropped += 1
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataError(f"{path}, line {lineno}: unparsable numeric value in {cells}") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(wanted))
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values present")
    D, K = len(process), len(quality)
    return RawSeries(
        X=arr[:, :D], Y=arr[:, D:D + K], process=tuple(process), quality=tuple(quality),
        time=arr[:, D + K] if time_column else None, dropped=dropped,
        units={n: SRU_UNITS[n] for n in wanted if n in SRU_UNITS},
    )


def lag_embed(raw: RawSeries, L: int = DEFAULT_LAGS) -> LaggedDataset:
    """Stack each process variable's current and previous ``L - 1`` values."""
    T, D = raw.X.shape
    if L < 1:
        raise DomainError(f"lag count must be >= 1, got {L}")
    if T < L:
        raise DomainError(f"need at least {L} rows for {L} lags, got {T}")
    N = T - L + 1
    X = np.empty((N, D * L))
    for d in range(D):
        for z in range(L):
            X[:, d * L + z] = raw.X[L - 1 - z:T - z, d]
    return LaggedDataset(X, raw.Y[L - 1:].copy(), raw.time[L - 1:].copy(), L)


def from_embedded(raw: RawSeries) -> LaggedDataset:
    """Treat process columns as already lag-embedded features."""
    return LaggedDataset(raw.X.copy(), raw.Y.copy(), raw.time.copy(), 1)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, A: np.ndarray) -> "Normalizer":
        mean = A.mean(axis=0)
        std = A.std(axis=0)
        # constant features map to 0
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, A: np.ndarray) -> np.ndarray:
        return (A - self.mean) / self.std

    def inverse(self, A: np.ndarray) -> np.ndarray:
        return A * self.std + self.mean


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    mode: str = "contiguous-temporal"

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise DomainError(f"need three non-negative fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise DomainError(f"fractions {self.fractions} do not sum to 1")
        if self.mode != "contiguous-temporal":
            raise DomainError(f"unsupported split mode {self.mode!r}")


def split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    # tiny epsilon so 0.6 * 10 floors to 6, not 5
    n_train = int(np.floor(spec.fractions[0] * n + 1e-9))
    n_val = int(np.floor(spec.fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split(ds: LaggedDataset, spec: SplitSpec = SplitSpec()):
    """Contiguous train/validation/test slices in time order."""
    if len(ds) < 5:
        raise DomainError(f"need at least 5 samples to split, got {len(ds)}")
    a, b, _ = split_sizes(len(ds), spec)
    return ds.subset(slice(0, a)), ds.subset(slice(a, a + b)), ds.subset(slice(a + b, None))


def _smooth_channels(rng: np.random.Generator, rows: int, D: int, burn: int = 200) -> np.ndarray:
    # AR(2)-filtered noise with channel-specific time constants
    n = rows + burn
    out = np.empty((n, D))
    for d in range(D):
        rho = 0.90 + 0.08 * rng.random()
        out[:, d] = lfilter([1.0], [1.0, -1.2 * rho, 0.2 * rho], rng.standard_normal(n))
    out = out[burn:]
    out = (out - out.mean(axis=0)) / out.std(axis=0)
    # mild cross-coupling between the feed streams
    mixing = np.eye(D) + 0.3 * rng.standard_normal((D, D)) / np.sqrt(D)
    return out @ mixing.T


def synth_sru(seed: int = 0, rows: int = 10_000, noise: float = 0.15) -> RawSeries:
    """Synthetic plant data with five autocorrelated flows and two coupled
    concentrations.

    Both targets depend nonlinearly on lagged inputs through a common latent
    term; an opposing term enters them with opposite signs and dominates, so
    the two concentrations are negatively correlated.  Each target also has
    a private nonlinear term.
    """
    if rows < 20:
        raise DomainError(f"rows must be >= 20, got {rows}")
    rng = np.random.default_rng(seed)
    D = len(SRU_PROCESS)
    pad = 12
    x = _smooth_channels(rng, rows + pad, D)

    def lag(d, z):
        return x[pad - z:pad - z + rows, d]

    common = np.tanh(0.8 * lag(0, 1) + 0.5 * lag(1, 3)) + 0.4 * lag(2, 0) * lag(3, 2)
    opposing = 1.2 * np.tanh(lag(4, 2) - 0.6 * lag(0, 5)) + 0.5 * np.sin(lag(1, 0))
    private1 = 0.5 * np.abs(lag(2, 4)) - 0.3 * lag(3, 7)
    private2 = 0.6 * np.tanh(lag(3, 1) * lag(4, 6)) + 0.3 * lag(1, 8) ** 2 / 2.0

    y1 = 0.6 * common + opposing + private1 + noise * rng.standard_normal(rows)
    y2 = 0.6 * common - opposing + private2 + noise * rng.standard_normal(rows)
    # concentrations on the order of a few hundredths, as in the plant data
    Y = np.column_stack([0.05 + 0.02 * y1, 0.04 + 0.02 * y2])
    X = 0.5 + 0.1 * x[pad:pad + rows]
    return RawSeries(X, Y, SRU_PROCESS, SRU_QUALITY, units=dict(SRU_UNITS))


def write_csv(raw: RawSeries, path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(list(raw.process) + list(raw.quality))
        for xr, yr in zip(raw.X, raw.Y):
            w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])


@dataclass
class PreparedData:
    """Scaled partitions plus the scalers fit on the training slice."""

    train: LaggedDataset
    val: LaggedDataset
    test: LaggedDataset
    x_scaler: Normalizer
    y_scaler: Normalizer
    quality: tuple[str, ...] = SRU_QUALITY

    @property
    def K(self) -> int:
        return self.train.Y.shape[1]

    @property
    def D_in(self) -> int:
        return self.train.X.shape[1]

    def select_objectives(self, ks: Sequence[int]) -> "PreparedData":
        ks = list(ks)
        return PreparedData(
            self.train.select_objectives(ks), self.val.select_objectives(ks),
            self.test.select_objectives(ks), self.x_scaler,
            Normalizer(self.y_scaler.mean[ks], self.y_scaler.std[ks]),
            tuple(self.quality[k] for k in ks),
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for part in (self.train, self.val, self.test):
            h.update(np.ascontiguousarray(part.X).tobytes())
            h.update(np.ascontiguousarray(part.Y).tobytes())
        return h.hexdigest()


def prepare(ds: LaggedDataset, spec: SplitSpec = SplitSpec(),
            quality: Sequence[str] = SRU_QUALITY) -> PreparedData:
    """Split, fit scalers on the training slice, and scale every slice."""
    train, val, test = split(ds, spec)
    xs, ys = Normalizer.fit(train.X), Normalizer.fit(train.Y)

    def scale(p):
        return LaggedDataset(xs.transform(p.X), ys.transform(p.Y), p.times, p.lags)

    return PreparedData(scale(train), scale(val), scale(test), xs, ys, tuple(quality))
