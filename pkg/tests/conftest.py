import numpy as np
import pytest

from cellfence.channel.scenario import default_scenario
from cellfence.phy.resource_grid import BandId, CellConfig


@pytest.fixture
def cell():
    return CellConfig(19575, 101, 50, (1, 6), 129, BandId.B3, 4, True, 0.0, (-600.0, 350.0))


@pytest.fixture
def small_cell():
    return CellConfig(24201, 56, 25, (3, 8), 17, BandId.B20, 2, True, 0.0, (100.0, -1100.0))


@pytest.fixture
def scenario():
    return default_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
