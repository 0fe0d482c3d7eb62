import numpy as np
import pytest

from scarcity_futures.control import GridSpec
from scarcity_futures.demand import DemandModel, RiskPrice
from scarcity_futures.market import CostSpec, ProducerSpec, SpotMap
from scarcity_futures.pricing import FuturesModel

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def spot_map():
    return SpotMap(b=1.0, cbar=10.0, eps=1.0, alpha_exp=0.5, cap_m=9.0)


@pytest.fixture
def ou():
    return DemandModel(a=-1.0, sigma=0.2, d0=1.0)


@pytest.fixture
def bench_fm(ou, spot_map):
    return FuturesModel(ou, RiskPrice.constant(0.1, 0.0, 1.0), spot_map, 1.0)


@pytest.fixture
def neutral_fm(ou, spot_map):
    return FuturesModel(ou, RiskPrice.zero(1.0), spot_map, 1.0)


@pytest.fixture
def producer():
    return ProducerSpec(CostSpec(0.0, 0.05, 0.01, 0.01), q_max=1.0, u_min=-1.0, u_max=1.0,
                        x_max=1.0, x0=0.0, r0=1.0, gamma=0.5)


@pytest.fixture
def small_grid():
    return GridSpec(r_max=3.0, nr=21, nx=11, nd=31, d_min=-1.0, d_max=3.0, T=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
