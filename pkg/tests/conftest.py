import warnings

import numpy as np
import pytest

from emsound import InstrumentSetup, LayeredEarthModel, make_heights


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def setup10():
    return InstrumentSetup(make_heights(10))


@pytest.fixture
def two_layer():
    return LayeredEarthModel([0.05, 0.3], [0.7])


@pytest.fixture(autouse=True)
def _quiet_height_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        yield
