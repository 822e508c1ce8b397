import numpy as np
import pytest

from vitalradar.radar import RadarConfig


@pytest.fixture(scope="session")
def table1():
    """The default 77 GHz 2TX/4RX evaluation-board profile."""
    return RadarConfig.iwr1642_default()


def small_config(num_chirps=128, adc_samples=256, n_tx=1, n_rx=1):
    """Reduced cube sizes keep closed-loop tests fast; physics unchanged."""
    return RadarConfig.from_primitives(
        f_min_hz=77.0e9, f_max_hz=77.0e9 + 2.9982e9, t_m_s=100e-6, t_c_s=50e-3,
        num_chirps=num_chirps, adc_samples=adc_samples, adc_rate_sps=6.0e6,
        n_tx=n_tx, n_rx=n_rx)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
