import numpy as np
import pytest
from hypothesis import settings

from jcmtomo.model import BlochVector, JcmConfig, SpinConvention
from jcmtomo.moments import build_design

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

PAULI_OUTCOMES = (np.array([1, 1, 2, 2, 3, 3]), np.array([1, -1, 1, -1, 1, -1]))


def random_ball(rng, count):
    """Uniform samples from the unit ball."""
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * rng.uniform(size=(count, 1)) ** (1 / 3)


@pytest.fixture(scope="session")
def cfg_d10():
    return JcmConfig.from_nbar(2, 50, 10)


@pytest.fixture(scope="session")
def cfg_d100():
    return JcmConfig.from_nbar(2, 50, 100)


@pytest.fixture(scope="session")
def table_design(cfg_d100):
    """The design the worked likelihood example is stated against."""
    return build_design(cfg_d100, 300, correlator="legacy", convention=SpinConvention.PAULI)


@pytest.fixture(scope="session")
def design_d100(cfg_d100):
    return build_design(cfg_d100, 300)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def bloch(v):
    return BlochVector.from_array(v)
