"""Morlet continuous wavelet transform engine.

Computes scalograms W(a, b) of uniformly sampled real traces, selects the
band of scales whose pseudo-frequencies cover the tidal power fluctuations
(periods of tens of minutes by default), and reduces the band to the summed
magnitude feature S(b) = sum_a |W(a, b)|. S(b) collapses wherever the water
level momentarily stops moving, which is what the turn detector keys on; the
``verify_rate_lemma`` report quantifies that link on synthetic envelopes.

Discretization: the analytic Morlet kernel psi(t) = pi^(-1/4) e^{j 2 pi f0 t}
e^{-t^2/2} is sampled on the signal grid, truncated at |tau| <= 4 standard
deviations, trapezoid-weighted, and mean-corrected so the sampled kernel sums
to zero (the truncated kernel would otherwise keep a relative mean of ~4e-5,
which leaks constant signal into every coefficient). Convolution runs in the
frequency domain by default; the direct time-domain path is the reference
implementation and the two are property-tested against each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from .util import ValidationError, require

DEFAULT_CENTER_FREQ = 6.0 / (2.0 * math.pi)  # omega0 = 6, good admissibility
DEFAULT_VOICES = 8

# Tide band defaults: fluctuation periods between 10 and 120 minutes.
TIDE_BAND_FMIN = 1.0 / 7200.0
TIDE_BAND_FMAX = 1.0 / 600.0

COI_FACTOR = math.sqrt(2.0)  # e-folding half-width in kernel natural units


@dataclass(frozen=True)
class WaveletSpec:
    """Analytic Morlet kernel pi^(-1/4) e^{j 2 pi f0 t} e^{-t^2/2}."""

    center_freq: float = DEFAULT_CENTER_FREQ
    truncation: float = 4.0  # support half-width in standard deviations

    def __post_init__(self):
        require(self.center_freq > 0, "center frequency must be positive")
        require(self.truncation > 0, "truncation radius must be positive")

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.center_freq

    def kernel(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        return (math.pi ** -0.25) * np.exp(1j * self.omega0 * tau - tau * tau / 2.0)

    def sample_kernel(self, step: float) -> np.ndarray:
        """Sampled kernel at spacing ``step`` natural units, symmetric support.

        Trapezoid end weights make the discrete sum a quadrature of the
        integral; the subtracted mean enforces exact zero total weight
        (admissibility) for the truncated support.
        """
        require(step > 0, "kernel sample step must be positive")
        half = int(math.ceil(self.truncation / step))
        tau = np.arange(-half, half + 1) * step
        psi = self.kernel(tau)
        psi[0] *= 0.5
        psi[-1] *= 0.5
        return psi - psi.mean()

    def first_moment(self) -> complex:
        """M1 = integral of tau * conj(psi(tau)) over the truncated support."""
        return _first_moment(self.center_freq, self.truncation)


@lru_cache(maxsize=None)
def _first_moment(center_freq: float, truncation: float) -> complex:
    w0 = 2.0 * math.pi * center_freq
    norm = math.pi ** -0.25
    re, _ = quad(lambda t: norm * t * math.exp(-t * t / 2.0) * math.cos(w0 * t),
                 -truncation, truncation, limit=400)
    im, _ = quad(lambda t: -norm * t * math.exp(-t * t / 2.0) * math.sin(w0 * t),
                 -truncation, truncation, limit=400)
    return complex(re, im)


@dataclass(frozen=True)
class ScaleBand:
    """Geometric scale ladder covering pseudo-frequencies [f_min, f_max]."""

    spec: WaveletSpec
    scales: np.ndarray  # seconds, strictly increasing
    f_min: float
    f_max: float

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64)
        object.__setattr__(self, "scales", scales)
        require(scales.size >= 1, "empty scale band")
        require(bool(np.all(scales > 0)), "scales must be positive")
        if scales.size > 1:
            require(bool(np.all(np.diff(scales) > 0)), "scales must be strictly increasing")
        f = self.pseudo_freqs
        tol = 1e-9
        require(bool(np.all(f >= self.f_min * (1 - tol)))
                and bool(np.all(f <= self.f_max * (1 + tol))),
                "pseudo-frequencies outside the declared band")

    @property
    def pseudo_freqs(self) -> np.ndarray:
        return self.spec.center_freq / self.scales

    def __len__(self) -> int:
        return int(self.scales.size)


def build_scales(spec: WaveletSpec, f_min: float, f_max: float,
                 voices_per_octave: int = DEFAULT_VOICES) -> ScaleBand:
    """Geometrically spaced scales whose pseudo-frequencies span [f_min, f_max].

    Scale count is ceil(log2(f_max/f_min) * voices) + 1, endpoints included.
    """
    require(f_min > 0, "f_min must be positive")
    if f_min > f_max:
        raise ValidationError("inverted band: f_min > f_max")
    require(voices_per_octave >= 1, "voices_per_octave must be >= 1")
    if f_min == f_max:
        scales = np.array([spec.center_freq / f_min])
    else:
        n = int(math.ceil(math.log2(f_max / f_min) * voices_per_octave)) + 1
        freqs = f_max * (f_min / f_max) ** (np.arange(n) / (n - 1))
        scales = spec.center_freq / freqs  # ascending since freqs descend
    return ScaleBand(spec, scales, f_min, f_max)


@dataclass
class Scalogram:
    """Complex CWT coefficients over (scale, time) plus edge metadata."""

    times: np.ndarray
    band: ScaleBand
    coeffs: np.ndarray  # complex, shape (n_scales, n_times)
    coi: np.ndarray     # per-scale cone-of-influence half-width, seconds

    def __post_init__(self):
        require(self.coeffs.shape == (len(self.band), self.times.size),
                "coefficient matrix shape mismatch")
        require(bool(np.all(self.coi >= 0)), "coi must be non-negative")
        if self.coi.size > 1:
            require(bool(np.all(np.diff(self.coi) >= 0)), "coi must be monotone in scale")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def scales(self) -> np.ndarray:
        return self.band.scales

    def interior_mask(self, scale_index: int) -> np.ndarray:
        """True where time is at least one COI half-width from both edges."""
        w = self.coi[scale_index]
        return ((self.times - self.times[0] >= w)
                & (self.times[-1] - self.times >= w))

    def export(self, out_dir) -> None:
        """Binary-free export: scales.csv, times.csv, coeffs_mag.csv + meta.json."""
        import os
        os.makedirs(out_dir, exist_ok=True)
        _write_column(os.path.join(out_dir, "scales.csv"), self.scales)
        _write_column(os.path.join(out_dir, "times.csv"), self.times)
        with open(os.path.join(out_dir, "coeffs_mag.csv"), "w", encoding="utf-8",
                  newline="\n") as f:
            for row in np.abs(self.coeffs):
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        meta = {
            "center_freq": self.band.spec.center_freq,
            "truncation": self.band.spec.truncation,
            "f_min": self.band.f_min,
            "f_max": self.band.f_max,
            "n_scales": int(len(self.band)),
            "n_times": int(self.times.size),
            "dt": self.dt,
            "coi_s": [float(c) for c in self.coi],
        }
        with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8",
                  newline="\n") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")


def _write_column(path, values) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for v in values:
            f.write(repr(float(v)) + "\n")


def _read_column(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        return np.array([float(line) for line in f if line.strip()])


def load_scalogram(in_dir) -> "Scalogram":
    """Rebuild a Scalogram from an ``export`` directory.

    Only magnitudes are persisted, so the loaded coefficients are real-valued
    magnitudes cast to complex. That is enough for plotting, ridge tracking,
    and S(b); phase-sensitive work needs the in-memory transform.
    """
    import os
    with open(os.path.join(in_dir, "meta.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    spec = WaveletSpec(float(meta["center_freq"]), float(meta["truncation"]))
    scales = _read_column(os.path.join(in_dir, "scales.csv"))
    times = _read_column(os.path.join(in_dir, "times.csv"))
    band = ScaleBand(spec, scales, float(meta["f_min"]), float(meta["f_max"]))
    rows = []
    with open(os.path.join(in_dir, "coeffs_mag.csv"), "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    coeffs = np.asarray(rows, dtype=np.float64).astype(np.complex128)
    coi = np.asarray([float(c) for c in meta["coi_s"]], dtype=np.float64)
    return Scalogram(times, band, coeffs, coi)


def cwt(times, values, band: ScaleBand, padding: str = "reflect",
        method: str = "fft") -> Scalogram:
    """Discrete CWT of a uniformly sampled real trace.

    Per scale a the trace is convolved with the sampled kernel and scaled by
    dt / sqrt(a) (trapezoidal quadrature of the CWT integral). The series is
    padded by the largest kernel half-support using ``padding`` (numpy.pad
    mode). ``method`` "fft" uses frequency-domain convolution; "direct" is the
    reference time-domain path.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    require(times.size == values.size, "times/values length mismatch")
    if times.size < 2:
        raise ValidationError("series shorter than 2 samples")
    require(bool(np.all(np.isfinite(values))),
            "cwt requires gap-free input; interpolate masked samples first")
    steps = np.diff(times)
    dt = steps[0]
    require(bool(np.all(np.abs(steps - dt) <= 1e-6 * dt)), "cwt needs a uniform grid")
    require(method in ("fft", "direct"), f"unknown method {method!r}")

    n = values.size
    half_max = int(math.ceil(band.spec.truncation * band.scales[-1] / dt))
    if half_max > n - 1:
        raise ValidationError(
            f"series too short for the largest wavelet support "
            f"(need > {half_max} samples, have {n})")
    xpad = np.pad(values, half_max, mode=padding)

    coeffs = np.empty((len(band), n), dtype=np.complex128)
    for i, a in enumerate(band.scales):
        kern = band.spec.sample_kernel(dt / a) * (dt / math.sqrt(a))
        half = (kern.size - 1) // 2
        if method == "direct":
            full = np.convolve(xpad, kern, mode="valid")
        else:
            full = fftconvolve(xpad, kern, mode="valid")
        start = half_max - half
        coeffs[i] = full[start:start + n]
    coi = COI_FACTOR * band.scales
    return Scalogram(times, band, coeffs, coi)


@dataclass
class TideBandFeature:
    """Summed tide-band magnitude S(b) on a uniform grid.

    ``valid`` is False where any scale's cone of influence touches the sample
    (edge-affected) or where the upstream data had a gap.
    """

    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    provenance: str = "cell"

    def __post_init__(self):
        require(self.times.size == self.values.size == self.valid.size,
                "feature arrays must share a length")
        finite = self.values[np.isfinite(self.values)]
        require(bool(np.all(finite >= 0)), "summed magnitudes must be non-negative")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("t_unix_s,s,valid\n")
            for t, s, v in zip(self.times, self.values, self.valid):
                sv = "" if not np.isfinite(s) else repr(float(s))
                f.write(f"{float(t)!r},{sv},{int(v)}\n")

    @classmethod
    def from_csv(cls, path, provenance: str | None = None) -> "TideBandFeature":
        import os
        times, vals, valid = [], [], []
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != "t_unix_s,s,valid":
                raise ValidationError(f"{path}: expected header 't_unix_s,s,valid'")
            for lineno, line in enumerate(f, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise ValidationError(f"{path}:{lineno}: expected 3 fields")
                times.append(float(parts[0]))
                vals.append(float(parts[1]) if parts[1] else np.nan)
                valid.append(bool(int(parts[2])))
        if provenance is None:
            provenance = os.path.splitext(os.path.basename(path))[0]
        return cls(np.array(times), np.array(vals), np.array(valid), provenance)


def summed_coefficient(sg: Scalogram, provenance: str = "cell") -> TideBandFeature:
    """S(b) = sum over band scales of |W(a, b)|, with all-scale COI validity."""
    values = np.abs(sg.coeffs).sum(axis=0)
    w = float(np.max(sg.coi))
    valid = ((sg.times - sg.times[0] >= w) & (sg.times[-1] - sg.times >= w))
    return TideBandFeature(sg.times.copy(), values, valid, provenance)


@dataclass
class RateLemmaReport:
    """How well |W| tracks the water-level rate on a synthetic envelope."""

    scales: np.ndarray
    per_scale_corr: np.ndarray   # Pearson(|W(a,b)|, C(a,b) |h'(b)|) on interior b
    feature_corr: float          # Pearson(S(b), |h'(b)| |sin(k h(b))|) on valid b
    first_moment: complex
    degenerate: bool
    n_interior: int


def _pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def verify_rate_lemma(geom, tide, envelope, band: ScaleBand,
                      method: str = "fft") -> RateLemmaReport:
    """Check that tide-band |W| is proportional to the local tide rate.

    Builds the envelope trace x(t) = A + B cos(k h(t)) on the tide's grid,
    computes its scalogram, and correlates |W(a, b)| against the first-order
    prediction C(a, b) |h'(b)| with C = B k |sin(k h(b))| |M1| sqrt(a). The
    ``geom`` argument is contextual (reported scenarios pair an envelope with
    a link geometry); the envelope parameters drive the computation.
    """
    k = envelope.spatial_rate
    x = envelope.at(tide.heights)
    m1 = band.spec.first_moment()
    if float(np.ptp(tide.heights)) == 0.0:
        return RateLemmaReport(band.scales.copy(),
                               np.full(len(band), np.nan), float("nan"),
                               m1, True, 0)
    sg = cwt(tide.times, x, band, method=method)
    hprime = np.gradient(tide.heights, tide.times)
    sin_term = np.abs(np.sin(k * tide.heights))
    target = np.abs(hprime) * sin_term
    per_scale = np.empty(len(band))
    n_interior = 0
    for i, a in enumerate(band.scales):
        interior = sg.interior_mask(i)
        n_interior = max(n_interior, int(interior.sum()))
        c = envelope.amplitude * abs(k) * sin_term * abs(m1) * math.sqrt(a)
        per_scale[i] = _pearson(np.abs(sg.coeffs[i])[interior],
                                (c * np.abs(hprime))[interior])
    feat = summed_coefficient(sg)
    feature_corr = _pearson(feat.values[feat.valid], target[feat.valid])
    degenerate = bool(np.all(np.isnan(per_scale)))
    return RateLemmaReport(band.scales.copy(), per_scale, feature_corr,
                           m1, degenerate, n_interior)


@dataclass
class RidgeReport:
    f_peak: float          # pseudo-frequency of the interior-averaged peak scale
    peak_index: int
    ridge: np.ndarray      # per-time argmax scale index
    stability: float       # fraction of interior columns with ridge near peak


def dominant_ridge(sg: Scalogram) -> RidgeReport:
    """Scale whose time-averaged |W| over interior samples is largest.

    Scales with no interior sample (COI wider than the record) are excluded.
    ``stability`` is the fraction of the peak scale's interior columns whose
    per-column argmax lies within one voice of the peak; persistent tones give
    values near 1, broadband noise gives small values.
    """
    mag = np.abs(sg.coeffs)
    profile = np.full(len(sg.band), np.nan)
    for i in range(len(sg.band)):
        interior = sg.interior_mask(i)
        if interior.any():
            profile[i] = mag[i, interior].mean()
    if np.all(np.isnan(profile)):
        raise ValidationError("record shorter than every scale's cone of influence")
    peak = int(np.nanargmax(profile))
    ridge = np.argmax(mag, axis=0)
    interior = sg.interior_mask(peak)
    if interior.any():
        stability = float(np.mean(np.abs(ridge[interior] - peak) <= 1))
    else:
        stability = 0.0
    return RidgeReport(float(sg.band.pseudo_freqs[peak]), peak, ridge, stability)


def tide_phase(t_grid, t_tide: float | None = None, series=None,
               band: ScaleBand | None = None, t0: float | None = None):
    """(sin phi, cos phi) with phi = 2 pi (t - t0) / T_tide.

    The phase origin t0 defaults to the start of the grid. When ``t_tide`` is
    not supplied it is estimated from ``series`` (a (times, values) pair) via
    the dominant scalogram ridge over ``band``.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_tide is None:
        require(series is not None and band is not None,
                "supply t_tide or a (times, values) series plus a band to estimate it")
        s_times, s_values = series
        report = dominant_ridge(cwt(s_times, s_values, band))
        t_tide = 1.0 / report.f_peak
    if t_tide <= 0:
        raise ValidationError("tide period must be positive")
    if t0 is None:
        t0 = float(t_grid[0]) if t_grid.size else 0.0
    phi = 2.0 * math.pi * (t_grid - t0) / t_tide
    return np.sin(phi), np.cos(phi)
