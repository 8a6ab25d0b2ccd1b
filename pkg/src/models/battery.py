"""Heuristic battery dispatch and cycle-based degradation accounting."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import rainflow
    RAINFLOW_AVAILABLE = True
except ImportError:
    RAINFLOW_AVAILABLE = False

from src.exceptions import ConfigError, ProfileParseError
from src.models.profiles import CycleLifeCurve, TimeSeries

logger = logging.getLogger(__name__)

if not RAINFLOW_AVAILABLE:
    logger.warning("rainflow not available. Install with: pip install rainflow")

REGULAR = 'regular'
IRREGULAR = 'irregular'
REGULAR_TOLERANCE = 1e-6
_SOC_EPS = 1e-12


@dataclass(frozen=True)
class BatteryTrace:
    """Result of dispatching one (possibly aggregate) battery over a horizon"""
    power: TimeSeries
    soc_pct: TimeSeries
    soc_kwh: TimeSeries
    imports: TimeSeries
    exports: TimeSeries
    initial_soc_pct: float = 0.0

    @property
    def horizon(self):
        return self.power.horizon

    @property
    def step_duration(self):
        return self.power.step_duration

    @property
    def grid_net(self):
        """Net grid exchange in kW (import positive), equal to d - g + p_bat"""
        return TimeSeries((self.imports.values - self.exports.values) / self.step_duration,
                          self.step_duration)

    def soc_history_pct(self):
        """SoC in percent including the state before the first step"""
        return np.concatenate([[self.initial_soc_pct], self.soc_pct.values])


@dataclass(frozen=True)
class CycleRecord:
    """One counted charge/discharge cycle (weight 1) or half cycle (weight 0.5)"""
    start_soc_pct: float
    end_soc_pct: float
    weight: float
    kind: str

    @property
    def dod(self):
        return abs(self.start_soc_pct - self.end_soc_pct)


def dispatch(demand, generation, spec):
    """Greedy self-consumption control of a battery.

    Surplus generation charges the battery up to its headroom and power limit,
    the remainder is exported. A deficit is served from the battery down to its
    minimum SoC, the remainder is imported.
    """
    demand.check_compatible(generation)
    dt = demand.step_duration
    horizon = demand.horizon
    d = demand.values
    g = generation.values

    if spec.capacity <= 0 or spec.max_power <= 0:
        surplus = g - d
        zeros = np.zeros(horizon)
        soc_kwh = np.full(horizon, spec.initial_soc_kwh)
        soc_pct = np.zeros(horizon) if spec.capacity <= 0 else np.full(horizon, spec.initial_soc_pct)
        return BatteryTrace(
            power=TimeSeries(zeros, dt),
            soc_pct=TimeSeries(soc_pct, dt),
            soc_kwh=TimeSeries(soc_kwh, dt),
            imports=TimeSeries(np.maximum(-surplus, 0.0) * dt, dt),
            exports=TimeSeries(np.maximum(surplus, 0.0) * dt, dt),
            initial_soc_pct=spec.initial_soc_pct if spec.capacity > 0 else 0.0,
        )

    eta_c = spec.charge_efficiency
    eta_d = spec.discharge_efficiency
    p_max = spec.max_power
    soc_min = spec.soc_min_kwh
    soc_max = spec.soc_max_kwh
    soc = spec.initial_soc_kwh

    power = [0.0] * horizon
    socs = [0.0] * horizon
    imports = [0.0] * horizon
    exports = [0.0] * horizon

    for t, (d_t, g_t) in enumerate(zip(d.tolist(), g.tolist())):
        surplus = g_t - d_t
        if surplus > 0:
            headroom = soc_max - soc
            p = min(surplus, p_max, headroom / (eta_c * dt)) if headroom > _SOC_EPS else 0.0
            soc = min(soc + eta_c * p * dt, soc_max)
            power[t] = p
            exports[t] = (surplus - p) * dt
        elif surplus < 0:
            deficit = -surplus
            available = soc - soc_min
            q = min(deficit, p_max, eta_d * available / dt) if available > _SOC_EPS else 0.0
            soc = max(soc - q / eta_d * dt, soc_min)
            power[t] = -q
            imports[t] = (deficit - q) * dt
        socs[t] = soc

    soc_kwh = np.array(socs)
    return BatteryTrace(
        power=TimeSeries(power, dt),
        soc_pct=TimeSeries(soc_kwh / spec.capacity * 100.0, dt),
        soc_kwh=TimeSeries(soc_kwh, dt),
        imports=TimeSeries(imports, dt),
        exports=TimeSeries(exports, dt),
        initial_soc_pct=spec.initial_soc_pct,
    )


def turning_points(soc_pct):
    """Reversal points of an SoC series, plateaus collapsed"""
    values = soc_pct.values if isinstance(soc_pct, TimeSeries) else np.asarray(soc_pct, dtype=float)
    if values.size == 0:
        return []
    if values.size == 1:
        return [float(values[0])]
    if not RAINFLOW_AVAILABLE:
        raise ImportError("rainflow is required for cycle counting")
    points = []
    for _, value in rainflow.reversals(values.tolist()):
        if not points or value != points[-1]:
            points.append(float(value))
    # drop interior points that do not change direction (can follow a plateau)
    cleaned = []
    for value in points:
        if len(cleaned) >= 2 and (cleaned[-1] - cleaned[-2]) * (value - cleaned[-1]) > 0:
            cleaned[-1] = value
        else:
            cleaned.append(value)
    return cleaned


def four_point_pairs(points):
    """Four-point rain-flow pairing.

    Returns (closed, residue): closed is a list of (start, end) pairs forming
    full cycles, residue the turning points left unpaired, in order.
    """
    stack = []
    closed = []
    for value in points:
        stack.append(value)
        while len(stack) >= 4:
            s1, s2, s3, s4 = stack[-4:]
            inner = abs(s3 - s2)
            if inner <= abs(s2 - s1) and inner <= abs(s4 - s3):
                closed.append((s2, s3))
                del stack[-3:-1]
            else:
                break
    return closed, stack


def _kind(start, end):
    return REGULAR if max(start, end) >= 100.0 - REGULAR_TOLERANCE else IRREGULAR


def rainflow_count(soc_pct):
    """Decompose an SoC (%) trajectory into full and half cycles"""
    closed, residue = four_point_pairs(turning_points(soc_pct))
    cycles = [CycleRecord(s, e, 1.0, _kind(s, e)) for s, e in closed]

    # Residual half cycles with the same endpoints pair up into full cycles
    pending = {}
    halves = []
    for start, end in zip(residue[:-1], residue[1:]):
        key = (round(min(start, end), 9), round(max(start, end), 9))
        if key in pending:
            index = pending.pop(key)
            first = halves[index]
            halves[index] = CycleRecord(first.start_soc_pct, first.end_soc_pct, 1.0, first.kind)
            continue
        pending[key] = len(halves)
        halves.append(CycleRecord(start, end, 0.5, _kind(start, end)))
    return cycles + halves


def depreciation_factor(cycles, curve, soc_max_pct=100.0):
    """Usage-driven fraction of battery life consumed (DF_regular + DF_irregular)"""
    regular = []
    irregular = []
    for cycle in cycles:
        if cycle.kind == REGULAR:
            regular.append(cycle.weight / curve.cycles_at(cycle.dod))
        else:
            dod_start = 100.0 - cycle.start_soc_pct / soc_max_pct * 100.0
            dod_end = 100.0 - cycle.end_soc_pct / soc_max_pct * 100.0
            irregular.append(cycle.weight * abs(1.0 / curve.cycles_at(dod_start)
                                                - 1.0 / curve.cycles_at(dod_end)))
    return math.fsum(regular) + math.fsum(irregular)


def battery_depreciation_cost(spec, horizon_years, df):
    """Depreciation in pence: capacity * price * T / max(1/DF, lifetime)"""
    denominator = spec.lifetime if df <= 0 else max(1.0 / df, spec.lifetime)
    return spec.capacity * spec.cost_per_kwh * horizon_years / denominator


def trace_depreciation(trace, spec):
    """(DF, depreciation pence) of a dispatched battery"""
    if spec.capacity <= 0:
        return 0.0, 0.0
    cycles = rainflow_count(trace.soc_history_pct())
    df = depreciation_factor(cycles, spec.cycle_life_curve, spec.soc_max_pct)
    return df, battery_depreciation_cost(spec, trace.power.years, df)


def load_cycle_life_curve(path, interpolation='log'):
    """Read a `dod_pct,max_cycles` CSV into a CycleLifeCurve"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"cycle life curve file not found: {path}")
    frame = pd.read_csv(path)
    missing = {'dod_pct', 'max_cycles'} - set(frame.columns)
    if missing:
        raise ProfileParseError(f"{path}: missing columns {sorted(missing)}")
    for row, (dod, cycles) in enumerate(zip(frame['dod_pct'], frame['max_cycles']), start=2):
        if pd.isna(dod) or pd.isna(cycles):
            raise ProfileParseError(f"{path}: empty value", row=row)
    try:
        return CycleLifeCurve(frame['dod_pct'].to_numpy(float), frame['max_cycles'].to_numpy(float),
                              interpolation=interpolation)
    except ValueError as e:
        raise ProfileParseError(f"{path}: {e}") from e
