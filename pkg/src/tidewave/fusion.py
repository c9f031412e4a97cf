"""Multi-cell combination of tide-band features.

Per-cell S(b) traces live on different power scales (different base station
EIRP, path loss, antenna gains), so each is first standardized against its
own rolling median and MAD. The standardized traces are resampled to a shared
grid, optionally aligned by an integer lag from masked cross-correlation, and
reduced to their pointwise median. The median keeps the fused trace inside
the envelope of the well-behaved cells as long as they are the majority,
which is what makes a single misbehaving cell harmless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cwt import TideBandFeature
from .util import ValidationError, require

DEFAULT_WINDOW = 9 * 3600.0   # rolling standardization window, seconds
DEFAULT_MIN_COUNT = 5         # fewest valid samples a window may hold
LAG_CORR_THRESHOLD = 0.5      # below this, an estimated lag is forced to 0
FUSION_DT = 60.0              # shared output grid, seconds


@dataclass
class StandardizedFeature:
    """(S - rolling median) / rolling MAD for one cell, masked where undefined."""

    cell_id: str
    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    window: float
    mad_zero_count: int = 0

    def __post_init__(self):
        require(self.times.size == self.values.size == self.valid.size,
                "standardized arrays must share a length")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def rolling_standardize(feature: TideBandFeature, window: float = DEFAULT_WINDOW,
                        min_count: int = DEFAULT_MIN_COUNT,
                        mode: str = "centered") -> StandardizedFeature:
    """Standardize S(b) against a rolling median and unscaled MAD.

    The window is centered on each sample and clipped at the record edges;
    ``mode="trailing"`` uses only samples at or before b for strictly causal
    deployments. Samples are masked where the window holds fewer than
    ``min_count`` valid points or where the MAD vanishes (flat stretch), the
    latter tallied in ``mad_zero_count``.
    """
    require(len(feature) >= 2, "need at least two samples")
    require(mode in ("centered", "trailing"), f"unknown window mode {mode!r}")
    dt = feature.dt
    require(window >= 10 * dt, "window must span at least 10 grid steps")
    times = feature.times
    vals = feature.values
    ok_in = feature.valid & np.isfinite(vals)
    n = times.size
    out = np.full(n, np.nan)
    out_ok = np.zeros(n, dtype=bool)
    mad_zero = 0
    half = window / 2.0
    for i in range(n):
        if not ok_in[i]:
            continue
        if mode == "centered":
            lo = np.searchsorted(times, times[i] - half, side="left")
            hi = np.searchsorted(times, times[i] + half, side="right")
        else:
            lo = np.searchsorted(times, times[i] - window, side="left")
            hi = i + 1
        w = vals[lo:hi][ok_in[lo:hi]]
        if w.size < min_count:
            continue
        med = np.median(w)
        mad = np.median(np.abs(w - med))
        if mad == 0.0:
            mad_zero += 1
            continue
        out[i] = (vals[i] - med) / mad
        out_ok[i] = True
    return StandardizedFeature(feature.provenance, times.copy(), out, out_ok,
                               window, mad_zero)


@dataclass(frozen=True)
class LagEstimate:
    shift_steps: int     # b trails a by this many grid steps at the peak
    correlation: float

    @property
    def accepted(self) -> int:
        """Shift to apply: 0 unless the peak correlation clears the threshold."""
        return self.shift_steps if self.correlation >= LAG_CORR_THRESHOLD else 0


def estimate_lag(a: StandardizedFeature, b: StandardizedFeature,
                 max_lag: float) -> LagEstimate:
    """Integer grid shift k maximizing masked Pearson corr(a[i], b[i+k]).

    Both features must live on the same grid. If b[i] == a[i-3] the estimate
    is +3. Ties prefer the smallest |shift|, then the negative one. Callers
    should apply ``.accepted`` so noise-driven peaks collapse to zero shift.
    """
    require(abs(a.dt - b.dt) <= 1e-6 * a.dt, "features must share a grid step")
    require(abs(a.times[0] - b.times[0]) <= 1e-6 * a.dt
            and len(a) == len(b), "features must share a time grid")
    require(max_lag >= 0, "max_lag must be non-negative")
    dt = a.dt
    k_max = int(math.floor(max_lag / dt))
    overlap = int(np.sum(a.valid & b.valid))
    if overlap * dt < 4 * max_lag or overlap < 2:
        raise ValidationError(
            f"co-valid span {overlap * dt:g} s is below 4*max_lag = {4 * max_lag:g} s")

    # candidate order encodes the tie rule: |k| ascending, negative first
    shifts = [0]
    for k in range(1, k_max + 1):
        shifts.extend((-k, k))
    best_k, best_c = 0, -np.inf
    n = len(a)
    for k in shifts:
        if k >= 0:
            av, bv = a.values[:n - k] if k else a.values, b.values[k:]
            am, bm = a.valid[:n - k] if k else a.valid, b.valid[k:]
        else:
            av, bv = a.values[-k:], b.values[:n + k]
            am, bm = a.valid[-k:], b.valid[:n + k]
        both = am & bm
        if both.sum() < 2:
            continue
        x, y = av[both], bv[both]
        if np.std(x) == 0 or np.std(y) == 0:
            continue
        c = float(np.corrcoef(x, y)[0, 1])
        if c > best_c:
            best_k, best_c = k, c
    return LagEstimate(best_k, best_c)


@dataclass
class FusedFeature:
    """Pointwise median of standardized cells on a shared grid."""

    times: np.ndarray
    values: np.ndarray
    contributing_count: np.ndarray
    availability: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        require(self.times.size == self.values.size == self.contributing_count.size,
                "fused arrays must share a length")
        ok = self.contributing_count >= 1
        require(bool(np.all(np.isfinite(self.values[ok]))),
                "valid fused samples must be finite")
        require(bool(np.all(~np.isfinite(self.values[~ok]))),
                "samples with no contributors must be masked")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def valid(self) -> np.ndarray:
        return self.contributing_count >= 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def as_feature(self, provenance: str = "fused") -> TideBandFeature:
        """View suitable for the turn detector; offsets S_fused to be >= 0.

        Standardized medians are signed while TideBandFeature values are
        magnitudes, so the minimum valid value is shifted to zero. A constant
        offset changes no window extremum.
        """
        vals = self.values.copy()
        ok = self.valid
        if ok.any():
            vals[ok] = vals[ok] - vals[ok].min()
        return TideBandFeature(self.times.copy(), vals, ok.copy(), provenance)

    def to_csv(self, path) -> None:
        cells = sorted(self.availability)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("t_unix_s,s_fused,contributing_count"
                    + "".join(f",avail_{c}" for c in cells) + "\n")
            for i, t in enumerate(self.times):
                sv = repr(float(self.values[i])) if self.valid[i] else ""
                row = [repr(float(t)), sv, str(int(self.contributing_count[i]))]
                row += [str(int(self.availability[c][i])) for c in cells]
                f.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FusedFeature":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
            if header[:3] != ["t_unix_s", "s_fused", "contributing_count"]:
                raise ValidationError(f"{path}: unexpected fused-feature header")
            cells = [h[len("avail_"):] for h in header[3:]]
            for h in header[3:]:
                require(h.startswith("avail_"), f"{path}: bad column {h!r}")
            times, vals, counts = [], [], []
            avail = {c: [] for c in cells}
            for line in f:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                times.append(float(parts[0]))
                vals.append(float(parts[1]) if parts[1] else np.nan)
                counts.append(int(parts[2]))
                for c, p in zip(cells, parts[3:]):
                    avail[c].append(bool(int(p)))
        return cls(np.array(times), np.array(vals), np.array(counts),
                   {c: np.array(v, dtype=bool) for c, v in avail.items()})


def median_fuse(features: list[StandardizedFeature],
                lags: list[int] | None = None) -> FusedFeature:
    """Pointwise median over the cells valid at each sample.

    All features must share one time grid. ``lags[l]`` shifts cell l by that
    many grid steps before fusing (cell l's sample i+lag lands at fused index
    i); samples shifted outside the record are unavailable. Even contributor
    counts take the mean of the middle two values.
    """
    require(len(features) >= 1, "need at least one feature to fuse")
    ref = features[0]
    ids = [f.cell_id for f in features]
    require(len(set(ids)) == len(ids), "duplicate cell ids")
    for f in features[1:]:
        require(len(f) == len(ref)
                and abs(f.times[0] - ref.times[0]) <= 1e-6 * ref.dt
                and abs(f.dt - ref.dt) <= 1e-6 * ref.dt,
                "features must share a time grid")
    if lags is None:
        lags = [0] * len(features)
    require(len(lags) == len(features), "one lag per feature")

    n = len(ref)
    stack = np.full((len(features), n), np.nan)
    avail = {}
    for row, (f, k) in enumerate(zip(features, lags)):
        vals = np.full(n, np.nan)
        ok = np.zeros(n, dtype=bool)
        src_lo, src_hi = max(0, k), min(n, n + k)
        dst_lo, dst_hi = max(0, -k), min(n, n - k)
        vals[dst_lo:dst_hi] = f.values[src_lo:src_hi]
        ok[dst_lo:dst_hi] = f.valid[src_lo:src_hi]
        vals[~ok] = np.nan
        stack[row] = vals
        avail[f.cell_id] = ok
    count = np.sum(~np.isnan(stack), axis=0)
    fused = np.full(n, np.nan)
    any_ok = count >= 1
    fused[any_ok] = np.nanmedian(stack[:, any_ok], axis=0)
    return FusedFeature(ref.times.copy(), fused, count, avail)


def fusion_grid(features: list[StandardizedFeature], dt: float) -> np.ndarray:
    """Shared grid of dt multiples covering the union of the cell spans."""
    require(len(features) >= 1, "no features")
    t0 = min(float(f.times[0]) for f in features)
    t1 = max(float(f.times[-1]) for f in features)
    start = math.ceil(t0 / dt) * dt
    stop = math.floor(t1 / dt) * dt
    require(stop >= start + dt, "cell spans too short for the fusion grid")
    return start + dt * np.arange(int(round((stop - start) / dt)) + 1)


def resample_standardized(feat: StandardizedFeature, grid: np.ndarray,
                          max_gap: float | None = None) -> StandardizedFeature:
    """Linear interpolation of the valid samples onto ``grid``.

    Grid points outside the valid coverage, or bridging a gap between valid
    samples wider than ``max_gap`` (default 3 native steps), are masked.
    """
    if max_gap is None:
        max_gap = 3 * feat.dt
    ok = feat.valid & np.isfinite(feat.values)
    t_ok = feat.times[ok]
    v_ok = feat.values[ok]
    vals = np.full(grid.size, np.nan)
    valid = np.zeros(grid.size, dtype=bool)
    if t_ok.size >= 2:
        inside = (grid >= t_ok[0]) & (grid <= t_ok[-1])
        vals[inside] = np.interp(grid[inside], t_ok, v_ok)
        right = np.searchsorted(t_ok, grid, side="left").clip(1, t_ok.size - 1)
        gap_ok = (t_ok[right] - t_ok[right - 1]) <= max_gap
        valid = inside & gap_ok
        vals[~valid] = np.nan
    return StandardizedFeature(feat.cell_id, grid.copy(), vals, valid,
                               feat.window, feat.mad_zero_count)


def fuse_cells(features: list[TideBandFeature], window: float = DEFAULT_WINDOW,
               dt_out: float = FUSION_DT, max_lag: float = 0.0,
               min_count: int = DEFAULT_MIN_COUNT,
               mode: str = "centered") -> FusedFeature:
    """Standardize each cell natively, resample to a shared grid, fuse.

    ``max_lag`` > 0 additionally aligns every cell to the first by the
    estimated (threshold-gated) cross-correlation lag.
    """
    require(len(features) >= 1, "need at least one cell")
    std = [rolling_standardize(f, window, min_count, mode) for f in features]
    grid = fusion_grid(std, dt_out)
    std = [resample_standardized(s, grid) for s in std]
    lags = [0] * len(std)
    if max_lag > 0:
        for i in range(1, len(std)):
            lags[i] = estimate_lag(std[0], std[i], max_lag).accepted
    return median_fuse(std, lags)
