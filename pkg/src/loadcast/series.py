"""Hourly load series: ingestion, splitting, scaling, decomposition, windowing.

Everything downstream (training, evaluation, the CLI) consumes the
`LoadSeries` produced here: a contiguous, strictly hourly sequence of
aggregated active-power samples in kW. All operations are pure.
"""

import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import (
    BoundaryOutOfRange,
    DegenerateRange,
    EmptyFile,
    GapTooLarge,
    MalformedRow,
    NonHourlySpacing,
    SeriesTooShort,
)
from .fileio import atomic_write_text

HOUR = timedelta(hours=1)

# Longest run of consecutive missing hours we are willing to fill by linear
# interpolation; anything longer aborts ingestion.
MAX_GAP_HOURS = 3


def _parse_timestamp(raw: str) -> datetime:
    txt = raw.strip()
    if txt.endswith(("Z", "z")):
        txt = txt[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(txt)
    except ValueError as exc:
        raise MalformedRow(f"bad timestamp {raw!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LoadSeries:
    """Contiguous hourly active-power samples (kW) starting at `start`.

    Index i corresponds to the hour `start + i hours`. Values are finite,
    non-negative float64.
    """

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if np.any(vals < 0):
            raise ValueError("values must be non-negative")
        if self.start.tzinfo is None or self.start.utcoffset() != timedelta(0):
            object.__setattr__(self, "start", self.start.astimezone(timezone.utc)
                               if self.start.tzinfo else self.start.replace(tzinfo=timezone.utc))
        if self.start.minute or self.start.second or self.start.microsecond:
            raise ValueError("start must be aligned to the top of an hour")

    def __len__(self) -> int:
        return self.values.size

    @property
    def end(self) -> datetime:
        """Timestamp of the last sample."""
        return self.start + (len(self) - 1) * HOUR

    def timestamp_at(self, i: int) -> datetime:
        return self.start + i * HOUR

    def index_of(self, ts: datetime) -> int:
        delta = ts - self.start
        hours = delta / HOUR
        if hours != int(hours):
            raise ValueError(f"{ts} is not on the hourly grid")
        return int(hours)

    def piece(self, i: int, j: int) -> "LoadSeries":
        """Sub-series covering indices [i, j)."""
        if not (0 <= i < j <= len(self)):
            raise ValueError(f"bad piece bounds [{i}, {j})")
        return LoadSeries(self.timestamp_at(i), self.values[i:j].copy())


@dataclass(frozen=True)
class NormParams:
    """Min-max scaling statistics fitted on the training split only."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min):
            raise DegenerateRange(
                f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")


@dataclass(frozen=True)
class SplitSpec:
    """Inclusive end dates of the training and validation spans."""

    train_end: date
    valid_end: date

    def __post_init__(self):
        if not (self.train_end < self.valid_end):
            raise BoundaryOutOfRange(
                f"train_end {self.train_end} must precede valid_end {self.valid_end}")


@dataclass(frozen=True)
class Decomposition:
    """Additive components: observed = trend + seasonal + residual.

    trend/residual are NaN where the centered moving average is undefined
    (the first and last period//2 samples).
    """

    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    period: int = 24


@dataclass(frozen=True)
class WindowedDataset:
    """Paired (input, target) windows on the normalized scale."""

    inputs: np.ndarray     # (n, in_len)
    targets: np.ndarray    # (n, out_len)
    norm: NormParams

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have the same row count")

    def __len__(self) -> int:
        return self.inputs.shape[0]


# -------------------------------------------------------------------------
# ingestion
# -------------------------------------------------------------------------

AGGREGATED_HEADER = ["timestamp", "active_power_kw"]
LAYOUTS = ("aggregated", "per-household")


def _parse_power(raw: str, row_num: int) -> float:
    try:
        val = float(raw)
    except ValueError as exc:
        raise MalformedRow(f"row {row_num}: bad number {raw!r}") from exc
    if not math.isfinite(val) or val < 0:
        raise MalformedRow(f"row {row_num}: power must be finite and >= 0, got {raw!r}")
    return val


def parse_load_csv(path, layout: str = "aggregated") -> LoadSeries:
    """Read an hourly load CSV into a LoadSeries.

    `aggregated` expects columns (timestamp, active_power_kw); `per-household`
    expects (timestamp, h01, ..., hNN) and sums the homes row-wise. Gaps of
    up to MAX_GAP_HOURS consecutive missing hours are filled by linear
    interpolation; larger gaps raise GapTooLarge.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        header = [h.strip() for h in header]
        if layout == "aggregated":
            if header != AGGREGATED_HEADER:
                raise MalformedRow(
                    f"{path}: expected header {AGGREGATED_HEADER}, got {header}")
        else:
            if len(header) < 2 or header[0] != "timestamp":
                raise MalformedRow(
                    f"{path}: per-household header must be timestamp,h01,...  got {header}")

        times: list[datetime] = []
        values: list[float] = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(
                    f"row {row_num}: expected {len(header)} fields, got {len(row)}")
            ts = _parse_timestamp(row[0])
            if ts.minute or ts.second or ts.microsecond:
                raise NonHourlySpacing(f"row {row_num}: {row[0]} not on an hourly boundary")
            power = sum(_parse_power(cell, row_num) for cell in row[1:])
            times.append(ts)
            values.append(power)

    if not times:
        raise EmptyFile(f"{path}: no data rows")
    return _assemble_hourly(times, values)


def _assemble_hourly(times: list[datetime], values: list[float]) -> LoadSeries:
    out = [values[0]]
    for k in range(1, len(times)):
        delta = (times[k] - times[k - 1]) / HOUR
        if delta <= 0 or delta != int(delta):
            raise NonHourlySpacing(
                f"{times[k - 1].isoformat()} -> {times[k].isoformat()} "
                f"is not a positive whole number of hours")
        missing = int(delta) - 1
        if missing > MAX_GAP_HOURS:
            raise GapTooLarge(
                f"{missing} consecutive hours missing after {times[k - 1].isoformat()}")
        if missing:
            lo, hi = values[k - 1], values[k]
            for j in range(1, missing + 1):
                out.append(lo + (hi - lo) * j / (missing + 1))
        out.append(values[k])
    return LoadSeries(times[0], np.array(out))


def write_series_csv(series: LoadSeries, path) -> None:
    """Emit the aggregated-layout CSV (timestamp, active_power_kw)."""
    lines = [",".join(AGGREGATED_HEADER)]
    for i, v in enumerate(series.values):
        lines.append(f"{format_timestamp(series.timestamp_at(i))},{v!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# -------------------------------------------------------------------------
# splitting and scaling
# -------------------------------------------------------------------------

def split_by_date(series: LoadSeries, spec: SplitSpec):
    """Cut the series into (train, valid, test) pieces.

    Each boundary date is inclusive: the training piece ends with the final
    hour of `spec.train_end`. The three pieces concatenate back to the input
    exactly.
    """
    def first_index_after(day: date) -> int:
        boundary = datetime(day.year, day.month, day.day, tzinfo=timezone.utc) \
            + timedelta(days=1)
        return int((boundary - series.start) / HOUR)

    i = first_index_after(spec.train_end)
    j = first_index_after(spec.valid_end)
    if not (0 < i < j < len(series)):
        raise BoundaryOutOfRange(
            f"split boundaries {spec.train_end}/{spec.valid_end} do not fall "
            f"inside the series span {series.start.date()}..{series.end.date()}")
    return series.piece(0, i), series.piece(i, j), series.piece(j, len(series))


def fit_minmax(train: LoadSeries) -> NormParams:
    """Scaling statistics from the training split (and nothing else)."""
    vals = train.values
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        raise DegenerateRange(f"constant series (all values {lo}); cannot scale")
    return NormParams(lo, hi)


def transform_minmax(x, p: NormParams, direction: str = "apply") -> np.ndarray:
    """Map kW values to [0, 1] ('apply') or back ('invert').

    Values outside the fitted range pass through unclipped, so validation and
    test data may map outside [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    span = p.x_max - p.x_min
    if direction == "apply":
        return (x - p.x_min) / span
    if direction == "invert":
        return x * span + p.x_min
    raise ValueError(f"direction must be 'apply' or 'invert', got {direction!r}")


# -------------------------------------------------------------------------
# additive decomposition
# -------------------------------------------------------------------------

def decompose_additive(series: LoadSeries, period: int = 24) -> Decomposition:
    """Classical moving-average decomposition into trend/seasonal/residual.

    Trend is a centered moving average (for an even period, a window of
    period+1 points with half weight on the endpoints); it is undefined for
    the first and last period//2 samples. The seasonal component is the
    per-position mean of the detrended values, re-centered to sum to zero
    over one period. Residual is whatever remains where trend is defined.
    """
    x = series.values
    n = x.size
    if n < 2 * period:
        raise SeriesTooShort(f"need at least {2 * period} samples, have {n}")

    half = period // 2
    if period % 2 == 0:
        filt = np.full(period + 1, 1.0 / period)
        filt[0] = filt[-1] = 0.5 / period
    else:
        filt = np.full(period, 1.0 / period)
    trend = np.full(n, np.nan)
    trend[half:n - half] = np.convolve(x, filt, mode="valid")

    detrended = x - trend
    season_means = np.empty(period)
    for pos in range(period):
        vals = detrended[pos::period]
        season_means[pos] = np.nanmean(vals)
    season_means -= season_means.mean()
    seasonal = np.tile(season_means, n // period + 1)[:n]

    residual = x - trend - seasonal
    return Decomposition(trend=trend, seasonal=seasonal, residual=residual,
                         period=period)


def write_decomposition_csv(series: LoadSeries, decomp: Decomposition, path) -> None:
    """timestamp,observed,trend,seasonal,residual with blanks where undefined."""
    def cell(v: float) -> str:
        return "" if math.isnan(v) else repr(float(v))

    lines = ["timestamp,observed,trend,seasonal,residual"]
    for i, v in enumerate(series.values):
        lines.append(",".join([
            format_timestamp(series.timestamp_at(i)),
            repr(float(v)),
            cell(decomp.trend[i]),
            repr(float(decomp.seasonal[i])),
            cell(decomp.residual[i]),
        ]))
    atomic_write_text(path, "\n".join(lines) + "\n")


# -------------------------------------------------------------------------
# windowing
# -------------------------------------------------------------------------

def build_windows(values, norm: NormParams, in_len: int = 24, out_len: int = 24,
                  stride: int = 1) -> WindowedDataset:
    """Slide an (in_len + out_len)-hour frame over a normalized sequence.

    Sample k reads its input from [k*stride, k*stride + in_len) and its
    target from the following out_len hours. Training uses stride 1,
    walk-forward evaluation stride 24.
    """
    x = np.asarray(values, dtype=np.float64)
    frame = in_len + out_len
    if x.size < frame:
        raise SeriesTooShort(f"need at least {frame} samples, have {x.size}")
    count = (x.size - frame) // stride + 1
    inputs = np.empty((count, in_len))
    targets = np.empty((count, out_len))
    for k in range(count):
        lo = k * stride
        inputs[k] = x[lo:lo + in_len]
        targets[k] = x[lo + in_len:lo + frame]
    return WindowedDataset(inputs=inputs, targets=targets, norm=norm)


# -------------------------------------------------------------------------
# synthetic fixture series
# -------------------------------------------------------------------------

def _daily_shape() -> np.ndarray:
    """Fixed double-peak profile (morning and evening), max |s| == 1."""
    h = np.arange(24, dtype=np.float64)
    raw = 0.6 * np.exp(-((h - 8.0) / 2.0) ** 2) + np.exp(-((h - 19.0) / 2.5) ** 2)
    raw -= raw.mean()
    return raw / np.abs(raw).max()


DAILY_SHAPE = _daily_shape()

DEFAULT_SYNTH_START = datetime(2020, 1, 1, tzinfo=timezone.utc)


def generate_synthetic(days: int, seasonal_amp: float = 3.0, noise_sd: float = 0.8,
                       trend_slope: float = 0.0, seed: int = 0,
                       start: datetime = DEFAULT_SYNTH_START) -> LoadSeries:
    """Deterministic seasonal-plus-noise fixture series.

    value(i) = base + seasonal_amp * shape(hour of day)
             + trend_slope * (i / 24) + N(0, noise_sd), clipped at 0.
    """
    if days < 2:
        raise ValueError("need at least 2 days")
    n = days * 24
    base = 1.0 + 1.5 * seasonal_amp
    i = np.arange(n, dtype=np.float64)
    vals = base + seasonal_amp * np.tile(DAILY_SHAPE, days) + trend_slope * (i / 24.0)
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        vals = vals + rng.normal(0.0, noise_sd, size=n)
    return LoadSeries(start, np.maximum(vals, 0.0))
