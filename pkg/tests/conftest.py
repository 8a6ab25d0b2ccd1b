import numpy as np
import pytest

from src.models.profiles import BatterySpec, CycleLifeCurve, GeneratorSpec, ProsumerSpec, TimeSeries, flat_tariffs


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run community-scale tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def linear_curve():
    """N(20)=10000, N(60)=4000, N(100)=3000 with linear interpolation"""
    return CycleLifeCurve([20, 60, 100], [10000, 4000, 3000], interpolation='linear')


@pytest.fixture
def make_prosumer():
    """Prosumer factory: demand in kW, generator as installed kW times a [0, 1] resource"""
    def factory(pid, demand, generator_kw=0.0, resource=None, step_duration=1.0, battery=None,
                cost_per_kw=0.0):
        demand = TimeSeries(demand, step_duration)
        if resource is None:
            resource = np.zeros(demand.horizon)
        generator = GeneratorSpec(generator_kw, TimeSeries(resource, step_duration), cost_per_kw=cost_per_kw)
        return ProsumerSpec(pid, demand, generator, battery or BatterySpec())
    return factory


@pytest.fixture
def unit_tariffs():
    """1 p/kWh import, nothing for exports, three one-hour steps"""
    return flat_tariffs(1.0, 0.0, 3, 1.0)


@pytest.fixture
def hand_community(make_prosumer):
    """Three prosumers with pairwise gains AB=10, AC=6, BC=2 and grand coalition gains 18"""
    return [
        make_prosumer('A', [0, 0, 0], generator_kw=10.0, resource=[1.0, 0.6, 0.0]),
        make_prosumer('B', [10, 0, 0], generator_kw=2.0, resource=[0.0, 0.0, 1.0]),
        make_prosumer('C', [0, 6, 2]),
    ]


@pytest.fixture
def pair_community(make_prosumer):
    """A exports 10 kWh that B needs in the single step: gains 10 at 1 p/kWh"""
    return [
        make_prosumer('A', [0], generator_kw=10.0, resource=[1.0]),
        make_prosumer('B', [10]),
    ]


@pytest.fixture
def pair_tariffs():
    return flat_tariffs(1.0, 0.0, 1, 1.0)
