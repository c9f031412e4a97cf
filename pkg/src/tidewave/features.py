"""Regression feature construction, standardization, chronological splits.

A feature row holds, per metric, each antenna's linear-domain level, every
ordered pairwise difference and ratio across antennas (robust to slow
transmitter drift: offsets cancel in differences, gains cancel in ratios),
plus the sine and cosine of the tide phase. A fused tide-band activity trace
can be appended as an extra column, zero-imputed and flagged by availability
bits so gaps in one cell never hide a whole row.

Rows with any masked metric channel are flagged invalid and carry NaN; they
are excluded from fitting and flagged in prediction output instead of being
silently interpolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cwt import TideBandFeature
from .fusion import FusedFeature
from .series import METRICS, MetricSeries
from .util import ValidationError, require

DEFAULT_FRACTIONS = (0.60, 0.05, 0.35)
ZERO_VAR_RTOL = 1e-12


@dataclass
class FeatureMatrix:
    times: np.ndarray
    values: np.ndarray           # (n_rows, n_cols), NaN only on invalid rows
    column_names: tuple[str, ...]
    row_valid: np.ndarray

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        require(self.values.shape == (self.times.size, len(self.column_names)),
                "feature matrix shape mismatch")
        require(self.row_valid.size == self.times.size, "row_valid length mismatch")
        require(not bool(np.isnan(self.values[self.row_valid]).any()),
                "valid rows must be NaN-free")

    @property
    def n_rows(self) -> int:
        return int(self.times.size)

    @property
    def n_cols(self) -> int:
        return len(self.column_names)

    def select(self, names) -> "FeatureMatrix":
        idx = []
        for name in names:
            require(name in self.column_names, f"unknown feature column {name!r}")
            idx.append(self.column_names.index(name))
        return FeatureMatrix(self.times, self.values[:, idx], tuple(names),
                             self.row_valid)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("t_unix_s,row_valid," + ",".join(self.column_names) + "\n")
            for i in range(self.n_rows):
                cells = [repr(float(self.times[i])), str(int(self.row_valid[i]))]
                for v in self.values[i]:
                    cells.append("" if not np.isfinite(v) else repr(float(v)))
                f.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
            require(header[:2] == ["t_unix_s", "row_valid"],
                    f"{path}: unexpected feature header")
            names = tuple(header[2:])
            times, valid, rows = [], [], []
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                times.append(float(parts[0]))
                valid.append(bool(int(parts[1])))
                rows.append([float(p) if p else np.nan for p in parts[2:]])
        return cls(np.array(times), np.array(rows, dtype=np.float64), names,
                   np.array(valid, dtype=bool))


def _pairs(k: int):
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def build_features(metrics: MetricSeries, phase,
                   include_fused=None) -> FeatureMatrix:
    """Assemble the feature matrix on the metric grid.

    ``phase`` is the (sin, cos) pair on the same grid. ``include_fused`` may
    be a TideBandFeature or a FusedFeature on the same grid; its values join
    as an ``s_fused`` column (zero where unavailable) plus availability bits.
    """
    require(metrics.domain == "linear", "features are built from linear-domain metrics")
    times = metrics.times
    n = times.size
    sin_phi, cos_phi = (np.asarray(p, dtype=np.float64) for p in phase)
    require(sin_phi.size == n and cos_phi.size == n,
            "phase arrays must match the metric grid")
    ants = metrics.antennas
    k = len(ants)

    names: list[str] = []
    cols: list[np.ndarray] = []
    for metric in METRICS:
        for a in ants:
            names.append(f"{metric}_a{a}")
            cols.append(metrics.values[(metric, a)])
    for metric in METRICS:
        for i, j in _pairs(k):
            names.append(f"{metric}_diff_a{ants[i]}_a{ants[j]}")
            cols.append(metrics.values[(metric, ants[i])]
                        - metrics.values[(metric, ants[j])])
    ratio_bad = np.zeros(n, dtype=bool)
    for metric in METRICS:
        for i, j in _pairs(k):
            names.append(f"{metric}_ratio_a{ants[i]}_a{ants[j]}")
            denom = metrics.values[(metric, ants[j])]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = metrics.values[(metric, ants[i])] / denom
            ratio_bad |= np.isfinite(denom) & (denom <= 0)
            cols.append(ratio)
    names += ["phase_sin", "phase_cos"]
    cols += [sin_phi, cos_phi]

    row_valid = metrics.row_valid() & ~ratio_bad
    row_valid &= np.isfinite(sin_phi) & np.isfinite(cos_phi)

    if include_fused is not None:
        require(include_fused.times.size == n
                and bool(np.all(np.abs(include_fused.times - times)
                                <= 1e-6 * metrics.dt)),
                "fused feature must share the metric grid")
        avail_cols: list[tuple[str, np.ndarray]] = []
        if isinstance(include_fused, FusedFeature):
            ok = include_fused.valid
            for cell in sorted(include_fused.availability):
                avail_cols.append((f"avail_{cell}",
                                   include_fused.availability[cell]))
        else:
            ok = include_fused.valid & np.isfinite(include_fused.values)
            avail_cols.append(("s_fused_avail", ok))
        fused_vals = np.where(ok, include_fused.values, 0.0)
        names.append("s_fused")
        cols.append(fused_vals)
        for cname, bits in avail_cols:
            names.append(cname)
            cols.append(bits.astype(np.float64))

    values = np.column_stack(cols)
    values[~row_valid] = np.nan
    return FeatureMatrix(times.copy(), values, tuple(names), row_valid)


@dataclass
class StandardizationStats:
    """Per-column affine transform fit on training rows only."""

    column_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        self.dropped = tuple(self.dropped)
        require(self.mean.size == self.std.size == len(self.column_names),
                "stats arrays must match the column list")
        require(bool(np.all(self.std > 0)), "retained columns must have std > 0")

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        aligned = matrix.select(self.column_names)
        vals = (aligned.values - self.mean) / self.std
        return FeatureMatrix(aligned.times, vals, self.column_names,
                             aligned.row_valid)

    def to_dict(self) -> dict:
        return {"column_names": list(self.column_names),
                "mean": [repr(float(v)) for v in self.mean],
                "std": [repr(float(v)) for v in self.std],
                "dropped": list(self.dropped)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(tuple(d["column_names"]),
                   np.array([float(v) for v in d["mean"]]),
                   np.array([float(v) for v in d["std"]]),
                   tuple(d.get("dropped", ())))


def fit_standardize(matrix: FeatureMatrix,
                    train_rows) -> tuple[StandardizationStats, FeatureMatrix]:
    """Fit per-column mean/std on the valid training rows, apply everywhere.

    Columns whose training variance vanishes (relative to their magnitude)
    carry no information and are dropped, recorded in ``stats.dropped``.
    """
    train_rows = np.asarray(train_rows)
    rows = matrix.values[train_rows]
    ok = matrix.row_valid[train_rows]
    rows = rows[ok]
    require(rows.shape[0] >= 2, "need at least 2 valid training rows")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    keep = std > ZERO_VAR_RTOL * (1.0 + np.abs(mean))
    kept_names = tuple(n for n, k in zip(matrix.column_names, keep) if k)
    dropped = tuple(n for n, k in zip(matrix.column_names, keep) if not k)
    stats = StandardizationStats(kept_names, mean[keep], std[keep], dropped)
    return stats, stats.apply(matrix)


@dataclass(frozen=True)
class SplitPlan:
    """Contiguous chronological train / validation / test index ranges."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        t, v, s = self.train_idx, self.val_idx, self.test_idx
        require(t.size > 0 and v.size > 0 and s.size > 0,
                "each split must be nonempty")
        require(t[-1] + 1 == v[0] and v[-1] + 1 == s[0] and t[0] == 0,
                "splits must be contiguous and ordered")

    @property
    def n(self) -> int:
        return int(self.test_idx[-1] + 1)


def chrono_split(n_rows: int, fractions=DEFAULT_FRACTIONS) -> SplitPlan:
    """Chronological split with boundaries at floor(cumulative fraction * n)."""
    require(len(fractions) == 3, "expected (train, val, test) fractions")
    require(abs(sum(fractions) - 1.0) <= 1e-9, "fractions must sum to 1")
    require(all(f > 0 for f in fractions), "fractions must be positive")
    b1 = math.floor(fractions[0] * n_rows)
    b2 = math.floor((fractions[0] + fractions[1]) * n_rows)
    if not (0 < b1 < b2 < n_rows):
        raise ValidationError(f"{n_rows} rows is too few for nonempty splits")
    return SplitPlan(np.arange(0, b1), np.arange(b1, b2), np.arange(b2, n_rows))


def adaptation_rows(n_rows: int, fraction: float = 0.10) -> np.ndarray:
    """Leading chronological slice used to fine-tune on a new deployment."""
    require(0 < fraction < 1, "adaptation fraction must be in (0, 1)")
    k = math.floor(fraction * n_rows)
    require(k >= 1, "too few rows for an adaptation slice")
    return np.arange(0, k)


def phase_origin(events, fallback: float) -> float:
    """Phase anchor: the detected tide turn nearest the fallback origin.

    With no high/low-water event available the fallback (typically the record
    start) is used unchanged, keeping the phase well defined everywhere.
    """
    from .detector import KIND_HIGH_LOW
    turns = [e.time for e in events if e.kind == KIND_HIGH_LOW]
    if not turns:
        return float(fallback)
    return float(min(turns, key=lambda t: abs(t - fallback)))
