import math

import numpy as np
import pytest

from src.exceptions import ConfigError, ProfileParseError
from src.models.battery import (IRREGULAR, REGULAR, CycleRecord, battery_depreciation_cost, depreciation_factor,
                                dispatch, load_cycle_life_curve, rainflow_count, trace_depreciation, turning_points)
from src.models.profiles import BatterySpec, TimeSeries


def lossless(capacity=2.0, max_power=2.0, **kwargs):
    return BatterySpec(capacity=capacity, max_power=max_power, charge_efficiency=1.0,
                       discharge_efficiency=1.0, **kwargs)


def series(values, step_duration=0.5):
    return TimeSeries(values, step_duration)


def test_dispatch_charges_then_exports_then_discharges():
    trace = dispatch(series([0, 0, 0, 2]), series([2, 2, 2, 0]), lossless())
    assert trace.soc_kwh.values.tolist() == pytest.approx([1, 2, 2, 1])
    assert trace.exports.values.tolist() == pytest.approx([0, 0, 1, 0])
    assert trace.imports.values.tolist() == pytest.approx([0, 0, 0, 0])
    assert trace.power.values.tolist() == pytest.approx([2, 2, 0, -2])


def test_dispatch_idle_battery():
    spec = lossless()
    trace = dispatch(series([0, 0]), series([0, 0]), spec)
    assert trace.power.values.tolist() == [0, 0]
    assert trace.soc_kwh.values.tolist() == [spec.initial_soc_kwh] * 2
    assert trace.imports.values.sum() == 0
    assert trace.exports.values.sum() == 0


def test_dispatch_empty_battery_forces_import():
    trace = dispatch(series([4]), series([0]), lossless())
    assert trace.power.values.tolist() == [0]
    assert trace.imports.values.tolist() == pytest.approx([2])


def test_dispatch_without_battery_is_pure_grid_exchange():
    trace = dispatch(series([1, 0], 1.0), series([0, 3], 1.0), BatterySpec())
    assert trace.imports.values.tolist() == [1, 0]
    assert trace.exports.values.tolist() == [0, 3]
    assert trace.grid_net.values.tolist() == [1, -3]


def test_dispatch_respects_trace_invariants():
    rng = np.random.default_rng(3)
    demand = series(rng.uniform(0, 3, 96))
    generation = series(rng.uniform(0, 4, 96))
    spec = BatterySpec(capacity=5.0, max_power=1.5, soc_min_pct=10.0, soc_max_pct=90.0)
    trace = dispatch(demand, generation, spec)
    assert np.all(trace.soc_pct.values >= 10.0 - 1e-9)
    assert np.all(trace.soc_pct.values <= 90.0 + 1e-9)
    assert np.all(np.abs(trace.power.values) <= 1.5 + 1e-9)
    assert np.all(trace.imports.values >= 0)
    assert np.all(trace.exports.values >= 0)
    assert not np.any((trace.imports.values > 0) & (trace.exports.values > 0))
    np.testing.assert_allclose(trace.grid_net.values,
                               demand.values - generation.values + trace.power.values, atol=1e-9)


def cheapest_import_cost(demand, generation, capacity, max_power, price=16):
    """Best import cost over every SoC path on the 0.1 kWh grid; all quantities in tenths of a kWh"""
    costs = {0: 0.0}
    for d, g in zip(demand, generation):
        step = {}
        for soc, cost in costs.items():
            for nxt in range(max(0, soc - max_power), min(capacity, soc + max_power) + 1):
                total = cost + price * max(d - g + nxt - soc, 0) / 10
                if total < step.get(nxt, np.inf):
                    step[nxt] = total
        costs = step
    return min(costs.values())


def test_dispatch_matches_exhaustive_optimum():
    rng = np.random.default_rng(11)
    for _ in range(200):
        horizon = int(rng.integers(1, 7))
        demand = rng.integers(0, 21, horizon)
        generation = rng.integers(0, 21, horizon)
        capacity = int(rng.integers(1, 31))
        max_power = int(rng.integers(1, capacity + 1))
        trace = dispatch(series(demand / 10, 1.0), series(generation / 10, 1.0),
                         lossless(capacity / 10, max_power / 10))
        heuristic = 16 * trace.imports.values.sum()
        assert heuristic == pytest.approx(cheapest_import_cost(demand, generation, capacity, max_power), abs=1e-6)


def test_rainflow_single_excursion_is_a_regular_full_cycle():
    cycles = rainflow_count([100, 60, 100])
    assert len(cycles) == 1
    assert cycles[0].weight == 1.0
    assert cycles[0].kind == REGULAR
    assert cycles[0].dod == pytest.approx(40)


def test_rainflow_constant_series_has_no_cycles():
    assert rainflow_count([50, 50, 50]) == []


def test_rainflow_mixed_excursions():
    """Reversals 100,0,100,40,80: one full 0-100 cycle, a regular 100-40 half and an irregular 40-80 half"""
    cycles = rainflow_count([100, 0, 100, 80, 40, 80])
    summary = sorted((c.weight, c.kind, round(c.dod, 6)) for c in cycles)
    assert summary == [(0.5, IRREGULAR, 40.0), (0.5, REGULAR, 60.0), (1.0, REGULAR, 100.0)]


def test_rainflow_closes_inner_cycle():
    cycles = rainflow_count([0, 100, 40, 60, 0])
    inner = [c for c in cycles if c.weight == 1.0 and c.dod == pytest.approx(20)]
    assert len(inner) == 1
    assert inner[0].kind == IRREGULAR


def test_depreciation_factor_cases(linear_curve):
    assert depreciation_factor([CycleRecord(100, 0, 1.0, REGULAR)], linear_curve) == pytest.approx(1 / 3000)
    assert depreciation_factor([CycleRecord(80, 40, 0.5, IRREGULAR)], linear_curve) == pytest.approx(7.5e-5)
    assert depreciation_factor([], linear_curve) == 0.0


def test_two_matching_halves_count_as_one_full_cycle(linear_curve):
    full = depreciation_factor(rainflow_count([100, 60, 100]), linear_curve)
    assert full == pytest.approx(depreciation_factor([CycleRecord(100, 60, 1.0, REGULAR)], linear_curve))


def soc_walks(count=1000, seed=5):
    """Seeded SoC random walks clipped to [0, 100], so some touch full charge"""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        steps = rng.normal(0.0, float(rng.uniform(5, 40)), int(rng.integers(2, 60)))
        yield np.clip(float(rng.uniform(0, 100)) + np.cumsum(steps), 0.0, 100.0)


def test_depreciation_factor_time_reversal(linear_curve):
    assert depreciation_factor(rainflow_count([30, 90, 10, 70, 20, 100, 50]), linear_curve) == pytest.approx(
        depreciation_factor(rainflow_count([50, 100, 20, 70, 10, 90, 30]), linear_curve))
    for soc in soc_walks():
        forward = depreciation_factor(rainflow_count(soc), linear_curve)
        backward = depreciation_factor(rainflow_count(soc[::-1]), linear_curve)
        assert forward == pytest.approx(backward, rel=1e-9, abs=1e-15)


def test_rainflow_accounts_for_every_reversal():
    for soc in soc_walks(seed=6):
        points = turning_points(soc)
        cycles = rainflow_count(soc)
        # a full cycle spans two ranges between reversals, a half cycle one
        assert math.fsum(2 * c.weight for c in cycles) == len(points) - 1
        assert all(c.weight in (0.5, 1.0) for c in cycles)


def test_trace_depreciation_time_reversal():
    rng = np.random.default_rng(8)
    spec = BatterySpec(capacity=4.0, max_power=2.0)
    for _ in range(50):
        demand = rng.uniform(0, 3, 48)
        generation = rng.uniform(0, 3, 48)
        trace = dispatch(series(demand), series(generation), spec)
        soc = trace.soc_history_pct()
        df, _ = trace_depreciation(trace, spec)
        assert df == pytest.approx(depreciation_factor(rainflow_count(soc[::-1]), spec.cycle_life_curve,
                                                       spec.soc_max_pct), rel=1e-9, abs=1e-15)


def test_battery_depreciation_cost_cases():
    spec = BatterySpec(capacity=2.0, max_power=1.0, cost_per_kwh=15000.0, lifetime=20.0)
    assert battery_depreciation_cost(spec, 1.0, 0.01) == pytest.approx(300.0)
    assert battery_depreciation_cost(spec, 1.0, 0.2) == pytest.approx(1500.0)
    assert battery_depreciation_cost(spec, 1.0, 0.0) == pytest.approx(1500.0)


def test_trace_depreciation_of_zero_capacity_battery():
    trace = dispatch(series([1]), series([0]), BatterySpec())
    assert trace_depreciation(trace, BatterySpec()) == (0.0, 0.0)


def test_load_cycle_life_curve(tmp_path):
    path = tmp_path / 'curve.csv'
    path.write_text('dod_pct,max_cycles\n20,10000\n60,4000\n100,3000\n')
    curve = load_cycle_life_curve(path, interpolation='linear')
    assert curve.cycles_at(40) == pytest.approx(7000)


def test_load_cycle_life_curve_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_cycle_life_curve(tmp_path / 'missing.csv')
    path = tmp_path / 'rising.csv'
    path.write_text('dod_pct,max_cycles\n20,4000\n60,10000\n')
    with pytest.raises(ProfileParseError):
        load_cycle_life_curve(path)
