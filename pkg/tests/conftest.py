import numpy as np
import pytest

from tidewave.sim import LinkGeometry, ReflectionModel, synth_tide, uniform_grid

# Deployment geometry used across the suite: 420 m link, 45 m mast,
# four receive antennas spaced 15 cm apart, LTE band 7 carrier.
SITE_TX_HEIGHT = 45.0
SITE_RX_HEIGHTS = (1.95, 1.80, 1.65, 1.50)
SITE_RANGE = 420.0
SITE_CARRIER_HZ = 2659.8e6

SEMIDIURNAL_PERIOD = 45360.0  # 12.6 h


@pytest.fixture
def site_geom() -> LinkGeometry:
    return LinkGeometry(SITE_TX_HEIGHT, SITE_RX_HEIGHTS, SITE_RANGE,
                        SITE_CARRIER_HZ)


@pytest.fixture
def sea_reflection() -> ReflectionModel:
    return ReflectionModel()


def make_tide(duration: float, dt: float, period: float = SEMIDIURNAL_PERIOD,
              amplitude: float = 0.5, mean: float = 0.0, phase: float = 0.0,
              noise_std: float = 0.0, seed: int | None = None):
    grid = uniform_grid(duration, dt)
    return synth_tide(period, amplitude, mean, phase, grid,
                      noise_std=noise_std, seed=seed)


@pytest.fixture
def tide_factory():
    return make_tide


def assert_close(actual, expected, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)
