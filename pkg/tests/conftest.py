import numpy as np
import pytest

from phaseflow.distributions import InfluxProfile, TptDistribution


@pytest.fixture
def uniform_short():
    """Uniform TPT on [0.1, 2] s."""
    return TptDistribution.uniform(0.1, 2.0)


@pytest.fixture
def uniform_long():
    return TptDistribution.uniform(0.1, 8.0)


@pytest.fixture
def lam20():
    return InfluxProfile.constant(20.0)


@pytest.fixture
def lam0():
    return InfluxProfile.constant(0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
