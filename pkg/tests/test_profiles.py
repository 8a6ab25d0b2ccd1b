import numpy as np
import pytest

from src.exceptions import DimensionError, ValidationError
from src.models.profiles import (DEFAULT_CYCLE_LIFE_CURVE, BatterySpec, CycleLifeCurve, GeneratorSpec, TimeSeries,
                                 flat_tariffs, net_demand)


def test_time_series_is_read_only():
    series = TimeSeries([1.0, 2.0], 0.5)
    with pytest.raises(ValueError):
        series.values[0] = 5.0


def test_time_series_rejects_empty_and_bad_step():
    with pytest.raises(ValidationError):
        TimeSeries([], 0.5)
    with pytest.raises(ValidationError):
        TimeSeries([1.0], 0.0)
    with pytest.raises(ValidationError):
        TimeSeries([np.nan], 0.5)


def test_time_series_arithmetic_checks_dimensions():
    a = TimeSeries([1.0, 2.0], 0.5)
    assert (a + a).values.tolist() == [2.0, 4.0]
    with pytest.raises(DimensionError):
        a + TimeSeries([1.0, 2.0, 3.0], 0.5)
    with pytest.raises(DimensionError):
        a - TimeSeries([1.0, 2.0], 1.0)


def test_years_of_a_full_half_hourly_year():
    assert TimeSeries.zeros(17520, 0.5).years == pytest.approx(1.0)


def test_flat_tariffs_reject_negative_prices():
    tariffs = flat_tariffs(16.0, 0.0, 4)
    assert tariffs.horizon == 4
    assert tariffs.import_tariff.values.tolist() == [16.0] * 4
    with pytest.raises(ValidationError):
        flat_tariffs(-1.0, 0.0, 4)


def test_battery_spec_bounds():
    spec = BatterySpec(capacity=2.0, max_power=1.0, soc_min_pct=10.0, soc_max_pct=90.0)
    assert spec.initial_soc_pct == 10.0
    assert spec.soc_min_kwh == pytest.approx(0.2)
    assert spec.soc_max_kwh == pytest.approx(1.8)
    with pytest.raises(ValidationError):
        BatterySpec(capacity=2.0, soc_min_pct=60.0, soc_max_pct=40.0)
    with pytest.raises(ValidationError):
        BatterySpec(capacity=2.0, charge_efficiency=0.0)


def test_battery_resized_keeps_chemistry():
    spec = BatterySpec(capacity=2.0, max_power=1.0, cost_per_kwh=100.0).resized(6.0, 0.5)
    assert spec.capacity == 6.0
    assert spec.max_power == 3.0
    assert spec.cost_per_kwh == 100.0


def test_generator_resource_must_be_normalised():
    with pytest.raises(ValidationError):
        GeneratorSpec(1.0, TimeSeries([1.5], 0.5))
    generator = GeneratorSpec(4.0, TimeSeries([0.0, 0.5, 1.0], 0.5))
    assert generator.generation.values.tolist() == [0.0, 2.0, 4.0]


def test_prosumer_rejects_negative_demand(make_prosumer):
    with pytest.raises(ValidationError):
        make_prosumer('x', [1.0, -0.5])


def test_net_demand_sign_convention():
    d = TimeSeries([2.0, 0.0], 1.0)
    g = TimeSeries([0.0, 3.0], 1.0)
    p = TimeSeries([0.0, 1.0], 1.0)
    assert net_demand(d, g, p).values.tolist() == [2.0, -2.0]


def test_cycle_life_curve_interpolation_and_clamping():
    curve = DEFAULT_CYCLE_LIFE_CURVE
    assert curve.cycles_at(100) == pytest.approx(3000)
    assert curve.cycles_at(10) == pytest.approx(15000)
    assert curve.cycles_at(5) == pytest.approx(15000)
    assert curve.cycles_at(100.5) == pytest.approx(3000)
    # log-linear between 20 % and 40 %
    assert curve.cycles_at(30) == pytest.approx(np.sqrt(10000 * 6000))


def test_cycle_life_curve_must_be_non_increasing():
    with pytest.raises(ValidationError):
        CycleLifeCurve([20, 60], [4000, 10000])
    with pytest.raises(ValidationError):
        CycleLifeCurve([60, 20], [10000, 4000])
