import numpy as np
import pytest

from hcmsim.engine import Engine

FLAT = (np.array([0.0]), np.zeros(1), np.zeros(1), np.zeros(1))


@pytest.fixture
def flat():
    return FLAT


@pytest.fixture
def facing_pair():
    """Two free modules, east face of 0 toward west face of 1, 7 mm apart."""
    eng = Engine(2)
    eng.place_module(0, 0.0, 0.0)
    eng.place_module(1, 0.057, 0.0)
    return eng


@pytest.fixture(scope="session")
def calibration():
    from hcmsim.platform import calibrate_pulse
    return calibrate_pulse()
