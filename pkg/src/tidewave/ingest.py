"""Raw metric-log cleaning: parse, validate, de-spike, resample.

The pipeline order is fixed and deliberate::

    drop_invalid -> db_to_linear -> iqr_mask -> hampel_filter
                 -> resample_uniform [-> lowpass]

Zero readings are decoder-failure sentinels and are dropped first; conversion
to linear power happens before any statistics so the cleaning operates on the
physical quantity (the alternative, cleaning in dB, is noted here and not
taken). The IQR test runs globally per channel per session; the Hampel filter
repairs local spikes; resampling aggregates (~10 snapshots/min in typical
captures) onto a uniform grid by bin-averaging linear values and linearly
interpolating, masking any grid cell whose nearest raw samples straddle a gap
longer than ``max_gap``. Masked cells hold NaN — there is no value behind a
mask for downstream code to read.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .series import METRICS, MetricSeries
from .util import ValidationError, require

RAW_LOG_HEADER = ("t_unix_s", "cell_id", "antenna", "rsrp_dbm", "rssi_dbm", "rsrq_db")

MAD_SCALE = 1.4826  # consistency constant: MAD -> sigma for Gaussian data


@dataclass(frozen=True)
class MetricRecord:
    timestamp: float
    cell_id: str
    antenna: int
    rsrp: float
    rssi: float
    rsrq: float

    def __post_init__(self):
        require(math.isfinite(self.timestamp), "record timestamp must be finite")
        require(self.antenna >= 0, "antenna index must be non-negative")


@dataclass
class ParseResult:
    records: list
    errors: list = field(default_factory=list)  # (lineno, message) pairs


@dataclass(frozen=True)
class IngestConfig:
    dt: float = 60.0
    max_gap: float | None = None        # defaults to 3*dt
    iqr_k: float = 1.0
    hampel_half: int = 5
    hampel_nmad: float = 3.0
    lowpass_period: float | None = None  # off by default
    antennas: int | None = None          # validate antenna < count when given

    def __post_init__(self):
        require(self.dt > 0, "dt must be positive")
        require(self.hampel_half >= 1, "hampel window_half must be >= 1")

    @property
    def gap(self) -> float:
        return 3.0 * self.dt if self.max_gap is None else float(self.max_gap)


def parse_records(stream, header=RAW_LOG_HEADER) -> ParseResult:
    """Parse a raw-log CSV stream into records plus an error report.

    Structurally broken rows (wrong field count) raise; rows with non-numeric
    values become error-report entries and are not silently dropped on the
    quiet — the caller sees them listed by line number.
    """
    first = stream.readline()
    if isinstance(first, bytes):
        raise ValidationError("parse_records expects a text stream")
    cols = tuple(first.strip().split(","))
    if cols != tuple(header):
        raise ValidationError(f"unreadable header: expected {','.join(header)!r}, "
                              f"got {first.strip()!r}")
    records, errors = [], []
    for lineno, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValidationError(
                f"line {lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            rec = MetricRecord(timestamp=float(parts[0]), cell_id=parts[1],
                               antenna=int(parts[2]), rsrp=float(parts[3]),
                               rssi=float(parts[4]), rsrq=float(parts[5]))
        except (ValueError, ValidationError) as exc:
            errors.append((lineno, str(exc)))
            continue
        records.append(rec)
    return ParseResult(records, errors)


def drop_invalid(records) -> list:
    """Remove records where any metric reads exactly zero (decoder sentinel)."""
    return [r for r in records if r.rsrp != 0.0 and r.rssi != 0.0 and r.rsrq != 0.0]


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=np.float64) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=np.float64))


def iqr_mask(values, k: float = 1.0) -> np.ndarray:
    """True where a value sits inside [Q1 - k*IQR, Q3 + k*IQR].

    Quartiles use linear interpolation over the finite values. Fewer than 4
    finite values: everything finite is retained and a warning is issued.
    Non-finite entries are always flagged invalid.
    """
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if finite.sum() < 4:
        warnings.warn("iqr_mask: fewer than 4 finite values, retaining all")
        return finite.copy()
    q1, q3 = np.percentile(values[finite], [25.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - k * iqr, q3 + k * iqr
    mask = finite.copy()
    mask[finite] = (values[finite] >= lo) & (values[finite] <= hi)
    return mask


def hampel_filter(values, window_half: int = 5, n_mad: float = 3.0) -> np.ndarray:
    """Replace samples deviating from their window median by > n_mad sigma.

    Sigma is estimated as 1.4826 * MAD within a window of +-window_half
    samples; edge windows are truncated. Non-finite samples pass through and
    are excluded from window statistics.
    """
    require(window_half >= 1, "window_half must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    out = values.copy()
    n = values.size
    for i in range(n):
        lo, hi = max(0, i - window_half), min(n, i + window_half + 1)
        window = values[lo:hi]
        window = window[np.isfinite(window)]
        if window.size == 0 or not np.isfinite(values[i]):
            continue
        med = np.median(window)
        mad = np.median(np.abs(window - med))
        if np.abs(values[i] - med) > n_mad * MAD_SCALE * mad:
            out[i] = med
    return out


def _group_channels(records):
    """records -> {(metric, antenna): (times, values)}, per-channel time order."""
    by_ant: dict = {}
    for r in records:
        by_ant.setdefault(r.antenna, []).append(r)
    channels = {}
    for ant, recs in by_ant.items():
        recs.sort(key=lambda r: r.timestamp)
        t = np.array([r.timestamp for r in recs])
        channels[("rsrp", ant)] = (t, np.array([r.rsrp for r in recs]))
        channels[("rssi", ant)] = (t.copy(), np.array([r.rssi for r in recs]))
        channels[("rsrq", ant)] = (t.copy(), np.array([r.rsrq for r in recs]))
    return channels


def _bin_average(times, values, grid, dt):
    """Mean of samples falling in each grid bin [g - dt/2, g + dt/2)."""
    idx = np.floor((times - grid[0]) / dt + 0.5).astype(int)
    ok = (idx >= 0) & (idx < grid.size)
    idx, times, values = idx[ok], times[ok], values[ok]
    sums = np.bincount(idx, weights=values, minlength=grid.size)
    tsum = np.bincount(idx, weights=times, minlength=grid.size)
    counts = np.bincount(idx, minlength=grid.size)
    nonempty = counts > 0
    return tsum[nonempty] / counts[nonempty], sums[nonempty] / counts[nonempty]


def resample_uniform(channels, dt: float, max_gap: float,
                     cell_id: str = "cell") -> MetricSeries:
    """Resample cleaned channel samples onto a shared uniform grid.

    ``channels`` maps (metric, antenna) to (times, values) in time order, or
    may be a list of MetricRecord which is grouped first. Values within a grid
    bin are averaged (mean time, mean value), then linearly interpolated onto
    the grid. Grid cells whose nearest raw samples straddle a gap > max_gap,
    or that fall outside a channel's coverage, are masked (NaN).
    """
    require(dt > 0, "dt must be positive")
    if isinstance(channels, list):
        channels = _group_channels(channels)
    sizes = [t.size for (t, _) in channels.values()]
    if not sizes or sum(sizes) < 2:
        raise ValidationError("resample_uniform needs at least 2 records")
    t_start = min(float(t[0]) for (t, _) in channels.values() if t.size)
    t_end = max(float(t[-1]) for (t, _) in channels.values() if t.size)
    n = int(math.floor((t_end - t_start) / dt)) + 1
    grid = t_start + dt * np.arange(n)
    out = {}
    for key, (times, values) in channels.items():
        keep = np.isfinite(values)
        times, values = times[keep], values[keep]
        col = np.full(n, np.nan)
        if times.size >= 1:
            bt, bv = _bin_average(times, values, grid, dt)
            if bt.size == 1:
                col[:] = np.nan
                exact = np.isclose(grid, bt[0], rtol=0, atol=dt * 1e-9)
                col[exact] = bv[0]
            else:
                col = np.interp(grid, bt, bv, left=np.nan, right=np.nan)
            # gap rule operates on the raw (pre-bin) sample times
            right = np.searchsorted(times, grid, side="left")
            left = np.searchsorted(times, grid, side="right") - 1
            covered = (left >= 0) & (right < times.size)
            gap_ok = np.zeros(n, dtype=bool)
            gap_ok[covered] = (times[right[covered]] - times[left[covered]]) <= max_gap
            col[~gap_ok] = np.nan
        out[key] = col
    return MetricSeries(cell_id, grid, out, domain="linear")


def lowpass(series: MetricSeries, cutoff_period: float) -> MetricSeries:
    """Zero-phase moving average (forward then backward), mask-aware."""
    window = int(round(cutoff_period / series.dt))
    if window < 1:
        raise ValidationError("lowpass window is below one sample")
    out = {}
    for key, vals in series.values.items():
        fwd = _masked_ma(vals, window, reverse=False)
        out[key] = _masked_ma(fwd, window, reverse=True)
    return MetricSeries(series.cell_id, series.times.copy(), out, domain=series.domain)


def _masked_ma(x, window: int, reverse: bool) -> np.ndarray:
    if reverse:
        return _masked_ma(x[::-1], window, reverse=False)[::-1]
    n = x.size
    out = np.full(n, np.nan)
    vals = np.where(np.isfinite(x), x, 0.0)
    cnt = np.isfinite(x).astype(np.float64)
    csum = np.concatenate(([0.0], np.cumsum(vals)))
    ccnt = np.concatenate(([0.0], np.cumsum(cnt)))
    for i in range(n):
        lo = max(0, i - window + 1)
        c = ccnt[i + 1] - ccnt[lo]
        if c > 0:
            out[i] = (csum[i + 1] - csum[lo]) / c
    # samples that were masked stay masked
    out[~np.isfinite(x)] = np.nan
    return out


@dataclass
class CleanResult:
    series: MetricSeries        # linear domain, uniform grid
    masked_fraction: float
    dropped_rows: int


def clean_cell(records, config: IngestConfig, cell_id: str) -> CleanResult:
    """Run the fixed pipeline for one cell's records (already drop_invalid'ed
    upstream of grouping is fine too; this applies every stage in order)."""
    kept = drop_invalid(records)
    dropped = len(records) - len(kept)
    if config.antennas is not None:
        for r in kept:
            require(r.antenna < config.antennas,
                    f"antenna index {r.antenna} outside configured count {config.antennas}")
    channels = _group_channels(kept)
    cleaned = {}
    for key, (times, vals) in channels.items():
        lin = db_to_linear(vals)
        mask = iqr_mask(lin, k=config.iqr_k)
        dropped += int(np.size(mask) - np.count_nonzero(mask))
        times, lin = times[mask], lin[mask]
        lin = hampel_filter(lin, config.hampel_half, config.hampel_nmad)
        cleaned[key] = (times, lin)
    series = resample_uniform(cleaned, config.dt, config.gap, cell_id=cell_id)
    if config.lowpass_period is not None:
        series = lowpass(series, config.lowpass_period)
    total = sum(v.size for v in series.values.values())
    masked = sum(int(np.size(v) - np.count_nonzero(np.isfinite(v)))
                 for v in series.values.values())
    return CleanResult(series, masked / total if total else 1.0, dropped)


def clean_log(records, config: IngestConfig) -> dict:
    """Group records by cell and clean each; returns {cell_id: CleanResult}."""
    by_cell: dict = {}
    for r in records:
        by_cell.setdefault(r.cell_id, []).append(r)
    require(len(by_cell) > 0, "no records to clean")
    return {cell: clean_cell(recs, config, cell) for cell, recs in sorted(by_cell.items())}
