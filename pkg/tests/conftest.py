import numpy as np
import pytest

from ricci_lab import ConformalTorus, RoundSphere
from ricci_lab.config import rng_for


@pytest.fixture
def flat_torus():
    return ConformalTorus.flat(16, 16)


@pytest.fixture
def wavy_torus():
    return ConformalTorus.sinusoid(24, 24, 3.0, 3.0, amplitude=0.1, modes=((1, 0), (0, 1)))


@pytest.fixture
def sphere():
    return RoundSphere(2, 1.0)


@pytest.fixture
def rng():
    return rng_for(7, "tests")


@pytest.fixture
def sphere_weight():
    """``f = ln(4 pi)``: unit weighted measure on the unit 2-sphere."""
    return np.float64(np.log(4.0 * np.pi))
