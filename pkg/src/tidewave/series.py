"""Time-series containers shared across the toolkit.

Two containers cover everything the pipeline moves around: ``TideSeries`` for
water heights (ground truth or gauge data) and ``MetricSeries`` for per-cell,
per-antenna LTE power metrics on a uniform grid. Both serialize to plain CSV
(UTF-8, LF, ``.`` decimal point) with a ``t_unix_s`` time column; masked metric
samples are written as empty fields and read back as NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .util import ValidationError, require

METRICS = ("rsrp", "rssi", "rsrq")
METRIC_UNITS = {"rsrp": "dbm", "rssi": "dbm", "rsrq": "db"}
LINEAR_SUFFIX = "lin"

# Relative tolerance for the uniform-grid check on MetricSeries times.
GRID_RTOL = 1e-6


def _as_float_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    require(arr.ndim == 1, "expected a 1-d array")
    return arr


@dataclass
class TideSeries:
    """Water height h(t) in meters relative to mean sea level."""

    times: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        self.times = _as_float_array(self.times)
        self.heights = _as_float_array(self.heights)
        require(self.times.size == self.heights.size, "times/heights length mismatch")
        require(self.times.size > 0, "empty tide series")
        require(bool(np.all(np.diff(self.times) > 0)), "times must be strictly increasing")
        require(bool(np.all(np.isfinite(self.heights))), "heights must be finite")

    def __len__(self) -> int:
        return int(self.times.size)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("t_unix_s,h_m\n")
            for t, h in zip(self.times, self.heights):
                f.write(f"{float(t)!r},{float(h)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "TideSeries":
        times, heights = [], []
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != "t_unix_s,h_m":
                raise ValidationError(f"{path}: expected header 't_unix_s,h_m', got {header!r}")
            for lineno, line in enumerate(f, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
                times.append(float(parts[0]))
                heights.append(float(parts[1]))
        return cls(np.array(times), np.array(heights))

    def interp_at(self, times) -> np.ndarray:
        """Linearly interpolate heights onto new times (no extrapolation guard)."""
        return np.interp(np.asarray(times, dtype=np.float64), self.times, self.heights)


def channel_column(cell_id: str, antenna: int, metric: str, domain: str) -> str:
    suffix = METRIC_UNITS[metric] if domain == "db" else LINEAR_SUFFIX
    return f"{cell_id}_ant{antenna}_{metric}_{suffix}"


def parse_channel_column(name: str) -> tuple[str, int, str, str]:
    """Split 'cell_ant0_rsrp_dbm' into (cell, antenna, metric, suffix)."""
    head, metric, suffix = name.rsplit("_", 2)
    if metric not in METRICS:
        raise ValidationError(f"unknown metric in column {name!r}")
    cell, _, ant = head.rpartition("_ant")
    if not cell or not ant.isdigit():
        raise ValidationError(f"cannot parse antenna index from column {name!r}")
    return cell, int(ant), metric, suffix


@dataclass
class MetricSeries:
    """Per-antenna LTE power metrics for one cell on a uniform time grid.

    ``values`` maps (metric, antenna) to a float array aligned with ``times``;
    NaN marks a masked sample. ``domain`` is "db" (dBm / dB as logged) or
    "linear" (after 10^(x/10) conversion).
    """

    cell_id: str
    times: np.ndarray
    values: dict = field(default_factory=dict)
    domain: str = "db"

    def __post_init__(self):
        self.times = _as_float_array(self.times)
        require(self.times.size >= 2, "metric series needs at least 2 samples")
        require(self.domain in ("db", "linear"), f"unknown domain {self.domain!r}")
        steps = np.diff(self.times)
        require(bool(np.all(steps > 0)), "times must be strictly increasing")
        dt = steps[0]
        require(bool(np.all(np.abs(steps - dt) <= GRID_RTOL * dt)),
                "metric series grid must be uniform")
        for key, arr in list(self.values.items()):
            arr = _as_float_array(arr)
            require(arr.size == self.times.size, f"channel {key} length mismatch")
            self.values[key] = arr

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def antennas(self) -> tuple[int, ...]:
        return tuple(sorted({a for (_, a) in self.values}))

    def channels(self) -> list[tuple[str, int]]:
        """Canonical channel order: metric-major, antenna ascending."""
        ants = self.antennas
        return [(m, a) for m in METRICS for a in ants if (m, a) in self.values]

    def valid_mask(self, key) -> np.ndarray:
        return np.isfinite(self.values[key])

    def row_valid(self) -> np.ndarray:
        """True where every channel has a finite sample."""
        mask = np.ones(self.times.size, dtype=bool)
        for key in self.channels():
            mask &= self.valid_mask(key)
        return mask

    def to_linear(self) -> "MetricSeries":
        require(self.domain == "db", "series is already linear")
        vals = {k: np.power(10.0, v / 10.0) for k, v in self.values.items()}
        return MetricSeries(self.cell_id, self.times.copy(), vals, domain="linear")

    def to_db(self) -> "MetricSeries":
        require(self.domain == "linear", "series is already in dB")
        vals = {k: 10.0 * np.log10(v) for k, v in self.values.items()}
        return MetricSeries(self.cell_id, self.times.copy(), vals, domain="db")

    def to_csv(self, path) -> None:
        chans = self.channels()
        header = ["t_unix_s"] + [channel_column(self.cell_id, a, m, self.domain)
                                 for (m, a) in chans]
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(header) + "\n")
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                for key in chans:
                    v = self.values[key][i]
                    row.append("" if not np.isfinite(v) else repr(float(v)))
                f.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "MetricSeries":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
            if not header or header[0] != "t_unix_s":
                raise ValidationError(f"{path}: first column must be t_unix_s")
            cols = [parse_channel_column(name) for name in header[1:]]
            require(len(cols) > 0, f"{path}: no metric columns")
            cells = {c[0] for c in cols}
            if len(cells) != 1:
                raise ValidationError(f"{path}: expected one cell per file, got {sorted(cells)}")
            suffixes = {c[3] for c in cols}
            domain = "linear" if suffixes == {LINEAR_SUFFIX} else "db"
            times = []
            data = [[] for _ in cols]
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != len(cols) + 1:
                    raise ValidationError(
                        f"{path}:{lineno}: expected {len(cols)+1} fields, got {len(parts)}")
                times.append(float(parts[0]))
                for j, p in enumerate(parts[1:]):
                    data[j].append(float(p) if p else np.nan)
        values = {}
        for (cell, ant, metric, _), col in zip(cols, data):
            values[(metric, ant)] = np.array(col)
        return cls(cells.pop(), np.array(times), values, domain=domain)
