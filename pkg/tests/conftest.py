import numpy as np
import pytest

from switchavg.chain import analyze_chain, build_generator
from switchavg.system import CatalogField


@pytest.fixture
def two_state():
    return build_generator([1.0, 2.0], [[0.0, 1.0], [1.0, 0.0]], labels=["up", "down"])


@pytest.fixture
def two_state_analysis(two_state):
    return analyze_chain(two_state)


@pytest.fixture
def single_state():
    return build_generator([0.0], [[0.0]])


@pytest.fixture
def linear_field():
    return CatalogField("linear", a=[3.0, -3.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)
