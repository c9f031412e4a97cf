"""Two-ray ground-reflection channel simulator.

A base-station antenna at height ``tx_height`` illuminates shore-mounted
receive antennas at heights ``rx_heights`` across a stretch of water at range
``range_m``. The water surface acts as a near-perfect mirror, so each receiver
sees the direct ray plus one specular bounce. As the water level h rises and
falls, the bounce path length changes and the received power sweeps through
constructive/destructive fringes; one full fringe corresponds to a water-level
change of ``cycle_height``.

Everything here is a pure function of its inputs plus an explicit seed, so the
module doubles as the physics oracle for the rest of the toolkit.

Model notes:

* ``path_difference_exact`` is the geometric excess path of the bounce and is
  the default everywhere. ``path_difference_linear`` is the small-h first-order
  form 2h(h_t - h_r)/d kept for reproducing analytical constants; note that it
  is NOT the derivative of the exact form (whose small-h slope is
  -2(h_t + h_r - 2h)/d) — both are exposed on purpose and the difference is
  documented rather than reconciled.
* ``received_power`` implements P0 * [1 + |rho|^2 + 2 |rho| cos(2 pi dd /
  lambda + phi_rho)]. The complex-voltage helper uses the conjugate reflection
  phase e^{-j(2 pi dd / lambda + phi_rho)} so that |v|^2 matches that power
  expression for every phi_rho, not just the default phi_rho = pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .series import MetricSeries, TideSeries
from .util import ValidationError, require

SPEED_OF_LIGHT = 299_792_458.0

# Receiver noise-floor power added before dBm conversion so two-ray nulls stay
# finite. -150 dBm is far below any synthetic signal level of interest.
DEFAULT_FLOOR_DBM = -150.0

# RSSI/RSRQ are synthesized as affine functions of RSRP (plus channel noise)
# purely so downstream features have full-width input. The offset corresponds
# to a 100-PRB carrier's occupied bandwidth relative to one resource element.
RSSI_OFFSET_DB = 30.8
RSRQ_BASE_DB = -10.8
RSRQ_SLOPE = 0.1


@dataclass(frozen=True)
class LinkGeometry:
    """Static two-ray link geometry: heights, range, and carrier."""

    tx_height: float
    rx_heights: tuple
    range_m: float
    carrier_freq: float
    wavelength: float | None = None

    def __post_init__(self):
        require(self.range_m > 0, "range must be positive")
        require(self.tx_height > 0, "tx height must be positive")
        require(len(self.rx_heights) > 0, "need at least one rx antenna")
        require(all(h > 0 for h in self.rx_heights), "rx heights must be positive")
        require(self.carrier_freq > 0, "carrier frequency must be positive")
        derived = SPEED_OF_LIGHT / self.carrier_freq
        if self.wavelength is None:
            object.__setattr__(self, "wavelength", derived)
        else:
            require(abs(self.wavelength - derived) <= 1e-9 * derived,
                    "wavelength inconsistent with carrier frequency")
        object.__setattr__(self, "rx_heights", tuple(float(h) for h in self.rx_heights))

    @property
    def n_antennas(self) -> int:
        return len(self.rx_heights)

    def far_field_ok(self) -> bool:
        return self.range_m > 10.0 * (self.tx_height + max(self.rx_heights))

    def envelope_rate(self, rx_index: int) -> float:
        """Spatial fringe rate k = 2 pi (h_t - h_r) / (lambda d), rad per meter.

        This is the first-order constant that pairs with
        ``path_difference_linear``; the exact model's local rate differs (see
        module docstring).
        """
        hr = self._rx(rx_index)
        return 2.0 * math.pi * (self.tx_height - hr) / (self.wavelength * self.range_m)

    def _rx(self, rx_index: int) -> float:
        if not 0 <= rx_index < len(self.rx_heights):
            raise ValidationError(f"antenna index {rx_index} out of range "
                                  f"(have {len(self.rx_heights)})")
        return self.rx_heights[rx_index]


@dataclass(frozen=True)
class ReflectionModel:
    """Specular reflection coefficient rho = magnitude * e^{j phase}.

    ``angle_hook``, when set, maps the grazing angle in radians to a
    (magnitude, phase) pair and overrides the static fields; it ships unset.
    """

    magnitude: float = 1.0
    phase: float = math.pi
    angle_hook: Callable | None = None

    def __post_init__(self):
        require(0.0 <= self.magnitude <= 1.0, "reflection magnitude must be in [0, 1]")

    def at_grazing(self, grazing_rad: float) -> tuple:
        if self.angle_hook is not None:
            mag, ph = self.angle_hook(grazing_rad)
            require(0.0 <= mag <= 1.0, "angle hook returned magnitude outside [0, 1]")
            return float(mag), float(ph)
        return self.magnitude, self.phase


@dataclass(frozen=True)
class EnvelopeParams:
    """Slow power envelope p(h) = offset + amplitude * cos(spatial_rate * h)."""

    offset: float
    amplitude: float
    spatial_rate: float

    def __post_init__(self):
        require(self.amplitude >= 0, "envelope amplitude must be non-negative")

    def at(self, h) -> np.ndarray:
        return self.offset + self.amplitude * np.cos(self.spatial_rate * np.asarray(h))


def path_difference_exact(geom: LinkGeometry, rx_index: int, h):
    """Exact two-ray excess path length for water level h (meters).

    Heights above the water surface are (h_t - h) and (h_r - h); the image of
    the receiver sits at depth (h_r - h) below the surface, giving a bounce
    path of sqrt(d^2 + (h_t + h_r - 2h)^2).
    """
    hr = geom._rx(rx_index)
    h = np.asarray(h, dtype=np.float64)
    d2 = geom.range_m ** 2
    bounce = np.sqrt(d2 + (geom.tx_height + hr - 2.0 * h) ** 2)
    direct = math.sqrt(d2 + (geom.tx_height - hr) ** 2)
    return bounce - direct


def path_difference_linear(geom: LinkGeometry, rx_index: int, h):
    """First-order excess path 2 h (h_t - h_r) / d (see module docstring)."""
    hr = geom._rx(rx_index)
    h = np.asarray(h, dtype=np.float64)
    return 2.0 * h * (geom.tx_height - hr) / geom.range_m


def power_from_path_difference(delta_d, wavelength: float, refl: ReflectionModel,
                               base_power: float):
    """Two-ray received power for a given excess path length.

    P = P0 * [1 + |rho|^2 + 2 |rho| cos(2 pi dd / lambda + phi_rho)].
    """
    require(base_power > 0, "base power must be positive")
    theta = 2.0 * math.pi * np.asarray(delta_d, dtype=np.float64) / wavelength
    mag, ph = refl.magnitude, refl.phase
    return base_power * (1.0 + mag * mag + 2.0 * mag * np.cos(theta + ph))


def received_power(geom: LinkGeometry, rx_index: int, h, refl: ReflectionModel,
                   base_power: float, phase_model: str = "exact"):
    """Received power at water level h; exact path difference by default."""
    if phase_model == "exact":
        dd = path_difference_exact(geom, rx_index, h)
    elif phase_model == "linear":
        dd = path_difference_linear(geom, rx_index, h)
    else:
        raise ValidationError(f"unknown phase model {phase_model!r}")
    return power_from_path_difference(dd, geom.wavelength, refl, base_power)


def complex_voltage(geom: LinkGeometry, rx_index: int, h, refl: ReflectionModel):
    """Normalized direct + bounce voltage whose |v|^2 matches received_power.

    The reflected term carries e^{-j(2 pi dd / lambda + phi_rho)} (conjugate
    reflection phase); see module docstring for why.
    """
    dd = path_difference_exact(geom, rx_index, h)
    theta = 2.0 * math.pi * np.asarray(dd) / geom.wavelength
    return 1.0 + refl.magnitude * np.exp(-1j * (theta + refl.phase))


def cycle_height(geom: LinkGeometry, rx_index: int) -> float:
    """Water-level change for one full power fringe: lambda d / (2 (h_t - h_r))."""
    hr = geom._rx(rx_index)
    if geom.tx_height == hr:
        raise ValidationError("no height sensitivity: tx and rx heights are equal")
    return geom.wavelength * geom.range_m / (2.0 * (geom.tx_height - hr))


def synth_tide(period: float, amplitude: float, mean: float, phase: float,
               grid, noise_std: float = 0.0, seed: int | None = None) -> TideSeries:
    """Sinusoidal tide h(t) = mean + amplitude sin(2 pi t / period + phase).

    Optional additive Gaussian perturbation of ``noise_std`` meters, seeded.
    """
    require(period > 0, "tide period must be positive")
    grid = np.asarray(grid, dtype=np.float64)
    require(grid.size > 0, "empty tide grid")
    h = mean + amplitude * np.sin(2.0 * math.pi * grid / period + phase)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        h = h + rng.normal(0.0, noise_std, size=grid.size)
    return TideSeries(grid, h)


def uniform_grid(duration: float, dt: float, start: float = 0.0) -> np.ndarray:
    """Times start, start+dt, ... covering [start, start+duration]."""
    require(dt > 0 and duration > 0, "duration and dt must be positive")
    n = int(math.floor(duration / dt)) + 1
    return start + dt * np.arange(n)


def simulate_metric_series(geom: LinkGeometry, tide: TideSeries, refl: ReflectionModel,
                           base_powers, noise_std: float = 0.0, seed: int | None = None,
                           cell_id: str = "cell", phase_model: str = "exact",
                           floor_dbm: float = DEFAULT_FLOOR_DBM) -> MetricSeries:
    """Per-antenna RSRP/RSSI/RSRQ traces (dBm/dB) on the tide's time grid.

    ``base_powers`` is one linear power per antenna. RSRP comes from the
    two-ray model plus Gaussian dB noise; RSSI and RSRQ are affine in RSRP
    with independent noise (see module constants). Deterministic per seed.
    """
    base_powers = [float(p) for p in np.atleast_1d(base_powers)]
    require(len(base_powers) == geom.n_antennas,
            f"need {geom.n_antennas} base powers, got {len(base_powers)}")
    rng = np.random.default_rng(seed)
    floor = 10.0 ** (floor_dbm / 10.0)
    n = len(tide)
    values = {}
    for a, p0 in enumerate(base_powers):
        p = received_power(geom, a, tide.heights, refl, p0, phase_model=phase_model)
        rsrp = 10.0 * np.log10(p + floor)
        if noise_std > 0:
            rsrp = rsrp + rng.normal(0.0, noise_std, size=n)
        rssi = rsrp + RSSI_OFFSET_DB
        rsrq = RSRQ_BASE_DB + RSRQ_SLOPE * (rsrp - 10.0 * math.log10(p0))
        if noise_std > 0:
            rssi = rssi + rng.normal(0.0, noise_std, size=n)
            rsrq = rsrq + rng.normal(0.0, 0.1 * noise_std, size=n)
        values[("rsrp", a)] = rsrp
        values[("rssi", a)] = rssi
        values[("rsrq", a)] = rsrq
    return MetricSeries(cell_id, tide.times.copy(), values, domain="db")


def write_raw_log(series: MetricSeries, path) -> None:
    """Serialize a dB-domain MetricSeries as a raw ingest log (long form)."""
    require(series.domain == "db", "raw logs are written in dB domain")
    ants = series.antennas
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_unix_s,cell_id,antenna,rsrp_dbm,rssi_dbm,rsrq_db\n")
        for i, t in enumerate(series.times):
            for a in ants:
                vals = [series.values[(m, a)][i] for m in ("rsrp", "rssi", "rsrq")]
                if not all(np.isfinite(v) for v in vals):
                    continue
                f.write(f"{float(t)!r},{series.cell_id},{a},"
                        f"{float(vals[0])!r},{float(vals[1])!r},{float(vals[2])!r}\n")
