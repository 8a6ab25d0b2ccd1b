"""Domain vocabulary: time series, tariffs and prosumer asset specifications.

All types are immutable once constructed. Power series are in kW, energy
series in kWh, tariffs in pence/kWh. Battery power is positive while charging.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from src.exceptions import DimensionError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_STEP_HOURS = 0.5
HOURS_PER_YEAR = 8760.0


def _frozen_array(values):
    array = np.array(values, dtype=float).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Fixed-step sequence of power or energy values"""
    values: np.ndarray
    step_duration: float = DEFAULT_STEP_HOURS

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen_array(self.values))
        if self.values.size < 1:
            raise ValidationError("time series must contain at least one step")
        if not self.step_duration > 0:
            raise ValidationError(f"step duration must be positive, got {self.step_duration}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("time series contains non-finite values")

    @classmethod
    def constant(cls, value, horizon, step_duration=DEFAULT_STEP_HOURS):
        if horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {horizon}")
        return cls(np.full(int(horizon), float(value)), step_duration)

    @classmethod
    def zeros(cls, horizon, step_duration=DEFAULT_STEP_HOURS):
        return cls.constant(0.0, horizon, step_duration)

    @property
    def horizon(self):
        return int(self.values.size)

    @property
    def years(self):
        """Length of the series in years (steps * Δt / 8760)"""
        return self.horizon * self.step_duration / HOURS_PER_YEAR

    def __len__(self):
        return self.horizon

    def __add__(self, other):
        self.check_compatible(other)
        return TimeSeries(self.values + other.values, self.step_duration)

    def __sub__(self, other):
        self.check_compatible(other)
        return TimeSeries(self.values - other.values, self.step_duration)

    def scaled(self, factor):
        return TimeSeries(self.values * factor, self.step_duration)

    def to_energy(self):
        """Convert a kW series to kWh per step"""
        return TimeSeries(self.values * self.step_duration, self.step_duration)

    def check_compatible(self, other):
        if self.horizon != other.horizon:
            raise DimensionError(f"horizon mismatch: {self.horizon} != {other.horizon}")
        if not np.isclose(self.step_duration, other.step_duration):
            raise DimensionError(
                f"step duration mismatch: {self.step_duration} != {other.step_duration}"
            )

    def require_nonnegative(self, name):
        if np.any(self.values < 0):
            raise ValidationError(f"{name} must be elementwise >= 0")
        return self


@dataclass(frozen=True)
class TariffSchedule:
    """Import (τ^b) and export (τ^s) tariffs per step in pence/kWh"""
    import_tariff: TimeSeries
    export_tariff: TimeSeries

    def __post_init__(self):
        self.import_tariff.check_compatible(self.export_tariff)
        if np.any(self.import_tariff.values < 0) or np.any(self.export_tariff.values < 0):
            raise ValidationError("tariffs must be nonnegative")

    @property
    def horizon(self):
        return self.import_tariff.horizon

    @property
    def step_duration(self):
        return self.import_tariff.step_duration

    def truncated(self, horizon):
        return TariffSchedule(
            TimeSeries(self.import_tariff.values[:horizon], self.step_duration),
            TimeSeries(self.export_tariff.values[:horizon], self.step_duration),
        )


def flat_tariffs(import_p, export_p, horizon, step_duration=DEFAULT_STEP_HOURS):
    """Constant import/export tariffs over the horizon"""
    if import_p < 0 or export_p < 0:
        raise ValidationError(f"tariffs must be nonnegative, got import={import_p} export={export_p}")
    return TariffSchedule(
        TimeSeries.constant(import_p, horizon, step_duration),
        TimeSeries.constant(export_p, horizon, step_duration),
    )


@dataclass(frozen=True, eq=False)
class CycleLifeCurve:
    """Piecewise map from depth of discharge (%) to maximum cycle count.

    Values between knots are interpolated log-linearly (or linearly when
    ``interpolation='linear'``) and clamped at the end knots.
    """
    dod_pct: np.ndarray
    max_cycles: np.ndarray
    interpolation: str = 'log'

    def __post_init__(self):
        dod = _frozen_array(self.dod_pct)
        cycles = _frozen_array(self.max_cycles)
        object.__setattr__(self, 'dod_pct', dod)
        object.__setattr__(self, 'max_cycles', cycles)
        if dod.size == 0 or dod.size != cycles.size:
            raise ValidationError("cycle life curve needs matching, non-empty knot lists")
        if np.any(np.diff(dod) <= 0):
            raise ValidationError("cycle life curve DoD knots must be strictly ascending")
        if np.any(cycles <= 0):
            raise ValidationError("cycle life curve must be strictly positive")
        if np.any(np.diff(cycles) > 0):
            raise ValidationError("cycle life curve must be non-increasing in DoD")
        if self.interpolation not in ('log', 'linear'):
            raise ValidationError(f"unknown interpolation '{self.interpolation}'")

    def cycles_at(self, dod):
        """Maximum number of cycles at the given DoD (%)"""
        if self.interpolation == 'linear':
            return float(np.interp(dod, self.dod_pct, self.max_cycles))
        return float(np.exp(np.interp(dod, self.dod_pct, np.log(self.max_cycles))))


DEFAULT_CYCLE_LIFE_CURVE = CycleLifeCurve(
    dod_pct=[10, 20, 40, 60, 80, 100],
    max_cycles=[15000, 10000, 6000, 4000, 3400, 3000],
)


@dataclass(frozen=True, eq=False)
class BatterySpec:
    """Stationary battery parameters (capacity in kWh, power in kW)"""
    capacity: float = 0.0
    max_power: float = 0.0
    soc_min_pct: float = 0.0
    soc_max_pct: float = 100.0
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    cost_per_kwh: float = 15000.0
    lifetime: float = 20.0
    cycle_life_curve: CycleLifeCurve = field(default=DEFAULT_CYCLE_LIFE_CURVE)
    initial_soc_pct: float = None

    def __post_init__(self):
        # An unspecified initial state of charge starts the battery empty
        if self.initial_soc_pct is None:
            object.__setattr__(self, 'initial_soc_pct', self.soc_min_pct)
        if not 0 <= self.soc_min_pct <= self.initial_soc_pct <= self.soc_max_pct <= 100:
            raise ValidationError(
                "expected 0 <= soc_min_pct <= initial_soc_pct <= soc_max_pct <= 100, got "
                f"{self.soc_min_pct}, {self.initial_soc_pct}, {self.soc_max_pct}"
            )
        if self.capacity < 0 or self.max_power < 0:
            raise ValidationError("battery capacity and power must be nonnegative")
        for name in ('charge_efficiency', 'discharge_efficiency'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValidationError(f"{name} must be in (0, 1], got {value}")
        if self.lifetime <= 0:
            raise ValidationError("battery lifetime must be positive")
        if self.cost_per_kwh < 0:
            raise ValidationError("battery cost must be nonnegative")

    @property
    def soc_min_kwh(self):
        return self.capacity * self.soc_min_pct / 100.0

    @property
    def soc_max_kwh(self):
        return self.capacity * self.soc_max_pct / 100.0

    @property
    def initial_soc_kwh(self):
        return self.capacity * self.initial_soc_pct / 100.0

    def resized(self, capacity, power_ratio):
        """Same chemistry and prices at another capacity; power scales with capacity"""
        return replace(self, capacity=float(capacity), max_power=float(capacity) * power_ratio)


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Share of a renewable generator; output = installed_power * resource_profile"""
    installed_power: float
    resource_profile: TimeSeries
    cost_per_kw: float = 107200.0
    lifetime: float = 20.0

    def __post_init__(self):
        if self.installed_power < 0:
            raise ValidationError("installed power must be nonnegative")
        values = self.resource_profile.values
        if np.any(values < -1e-9) or np.any(values > 1 + 1e-9):
            raise ValidationError("resource profile must be normalized to [0, 1]")
        if self.lifetime <= 0:
            raise ValidationError("generator lifetime must be positive")

    @property
    def generation(self):
        return self.resource_profile.scaled(self.installed_power)


@dataclass(frozen=True, eq=False)
class ProsumerSpec:
    """One household: demand profile plus its generator share and battery"""
    id: str
    demand: TimeSeries
    generator: GeneratorSpec
    battery: BatterySpec = field(default_factory=BatterySpec)

    def __post_init__(self):
        self.demand.require_nonnegative(f"demand of {self.id}")
        self.demand.check_compatible(self.generator.resource_profile)

    @property
    def generation(self):
        return self.generator.generation

    @property
    def horizon(self):
        return self.demand.horizon

    def with_generator(self, installed_power):
        return replace(self, generator=replace(self.generator, installed_power=float(installed_power)))

    def with_battery(self, battery):
        return replace(self, battery=battery)


def net_demand(demand, generation, battery_power):
    """e(t) = d(t) - g(t) + p_bat(t); positive means importing"""
    demand.check_compatible(generation)
    demand.check_compatible(battery_power)
    return TimeSeries(demand.values - generation.values + battery_power.values, demand.step_duration)
