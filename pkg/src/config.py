"""Scenario configuration: TOML file, environment defaults and CLI overrides."""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from src.exceptions import ConfigError, ValidationError
from src.market.negotiation import AgentStrategy
from src.models.battery import load_cycle_life_curve
from src.models.profiles import DEFAULT_CYCLE_LIFE_CURVE, BatterySpec, flat_tariffs

logger = logging.getLogger(__name__)

SOURCES = ('synthetic', 'csv', 'df_target')
MECHANISMS = ('central', 'negotiation')

# TOML section of every config field
SECTIONS = {
    'horizon': ('steps', 'step_duration'),
    'tariffs': ('import_tariff', 'export_tariff'),
    'assets': ('battery_cost_per_kwh', 'battery_lifetime', 'generator_cost_per_kw', 'generator_lifetime',
               'charge_efficiency', 'discharge_efficiency', 'soc_min_pct', 'soc_max_pct', 'power_ratio',
               'cycle_life_curve', 'size_assets', 'battery_max_kwh', 'battery_step_kwh',
               'generation_max_kw', 'generation_step_kw', 'generator_kw', 'battery_kwh'),
    'community': ('source', 'size', 'profiles_path', 'library_path', 'wind_path', 'daily_kwh_mean',
                  'daily_kwh_std', 'day_noise', 'target_df', 'df_tolerance'),
    'market': ('mechanism', 'threshold', 'k', 'deadline', 'reservation_value', 'reservation_values',
               'umax_mode', 'pair_mode'),
    'grid': ('feeder_path', 'mapping_path'),
    'output': ('output_dir', 'workers'),
}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = None
    steps: int = 17520
    step_duration: float = 0.5
    import_tariff: float = 16.0
    export_tariff: float = 0.0
    battery_cost_per_kwh: float = 15000.0
    battery_lifetime: float = 20.0
    generator_cost_per_kw: float = 107200.0
    generator_lifetime: float = 20.0
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    soc_min_pct: float = 0.0
    soc_max_pct: float = 100.0
    power_ratio: float = 0.5
    cycle_life_curve: str = None
    size_assets: bool = True
    battery_max_kwh: float = 15.0
    battery_step_kwh: float = 0.5
    generation_max_kw: float = 10.0
    generation_step_kw: float = 0.25
    generator_kw: float = 0.0
    battery_kwh: float = 0.0
    source: str = 'synthetic'
    size: int = 100
    profiles_path: str = None
    library_path: str = None
    wind_path: str = None
    daily_kwh_mean: float = 10.0
    daily_kwh_std: float = 3.0
    day_noise: float = 0.1
    target_df: float = None
    df_tolerance: float = 0.05
    mechanism: str = 'central'
    threshold: float = 0.01
    k: int = 5
    deadline: int = 20
    reservation_value: float = 0.0
    reservation_values: dict = field(default_factory=dict)
    umax_mode: str = 'best'
    pair_mode: bool = False
    feeder_path: str = None
    mapping_path: str = None
    output_dir: str = 'results'
    workers: int = 1

    def validate(self):
        """Check value ranges and that referenced files exist"""
        if self.steps < 1 or self.step_duration <= 0:
            raise ConfigError("horizon needs steps >= 1 and step_duration > 0")
        if self.source not in SOURCES:
            raise ConfigError(f"community source must be one of {SOURCES}, got '{self.source}'")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"market mechanism must be one of {MECHANISMS}, got '{self.mechanism}'")
        if self.source != 'csv' and self.seed is None:
            raise ConfigError("a seed is required for synthetic communities")
        if self.source == 'csv' and not self.profiles_path:
            raise ConfigError("community source 'csv' needs profiles_path")
        if self.source == 'df_target' and self.target_df is None:
            raise ConfigError("community source 'df_target' needs target_df")
        if self.size < 1 or self.k < 1 or self.deadline < 1 or self.workers < 1:
            raise ConfigError("size, k, deadline and workers must be >= 1")
        if self.threshold < 0:
            raise ConfigError("threshold must be nonnegative")
        if bool(self.feeder_path) != bool(self.mapping_path):
            raise ConfigError("feeder_path and mapping_path must be given together")
        for name in ('profiles_path', 'library_path', 'wind_path', 'cycle_life_curve', 'feeder_path',
                     'mapping_path'):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} not found: {value}")
        try:
            self.tariffs()
            self.battery_spec(1.0)
            self.sizing()
        except ValidationError as e:
            raise ConfigError(str(e)) from e
        return self

    def tariffs(self):
        return flat_tariffs(self.import_tariff, self.export_tariff, self.steps, self.step_duration)

    def cycle_life(self):
        if self.cycle_life_curve:
            return load_cycle_life_curve(self.cycle_life_curve)
        return DEFAULT_CYCLE_LIFE_CURVE

    def battery_spec(self, capacity=None):
        capacity = self.battery_kwh if capacity is None else capacity
        return BatterySpec(
            capacity=capacity,
            max_power=capacity * self.power_ratio,
            soc_min_pct=self.soc_min_pct,
            soc_max_pct=self.soc_max_pct,
            charge_efficiency=self.charge_efficiency,
            discharge_efficiency=self.discharge_efficiency,
            cost_per_kwh=self.battery_cost_per_kwh,
            lifetime=self.battery_lifetime,
            cycle_life_curve=self.cycle_life(),
        )

    def sizing(self):
        """Keyword arguments for community synthesis and asset sizing"""
        return {
            'generator': {'cost_per_kw': self.generator_cost_per_kw, 'lifetime': self.generator_lifetime},
            'grids': {
                'battery_candidates': candidate_grid(self.battery_max_kwh, self.battery_step_kwh),
                'generation_candidates': candidate_grid(self.generation_max_kw, self.generation_step_kw),
                'power_ratio': self.power_ratio,
            },
        }

    def strategies(self):
        """(per-prosumer strategies, default strategy for unlisted prosumers)"""
        overrides = {pid: AgentStrategy(float(rv), self.deadline) for pid, rv in self.reservation_values.items()}
        return overrides, AgentStrategy(float(self.reservation_value), self.deadline)


def candidate_grid(maximum, step):
    """0, step, 2*step, ... up to maximum inclusive"""
    if maximum < 0 or step <= 0:
        raise ConfigError(f"candidate grid needs maximum >= 0 and step > 0, got {maximum}, {step}")
    return tuple(np.round(np.arange(0.0, maximum + step / 2, step), 6))


def _flatten(document, path):
    values = {}
    known = {f.name for f in fields(ScenarioConfig)}
    for key, value in document.items():
        if key in SECTIONS and isinstance(value, dict):
            for inner, inner_value in value.items():
                if inner not in SECTIONS[key]:
                    raise ConfigError(f"{path}: unknown key '{inner}' in [{key}]")
                values[inner] = inner_value
        elif key in known:
            values[key] = value
        else:
            raise ConfigError(f"{path}: unknown key '{key}'")
    return values


def _resolve_paths(values, base):
    for name in ('profiles_path', 'library_path', 'wind_path', 'cycle_life_curve', 'feeder_path',
                 'mapping_path'):
        value = values.get(name)
        if value and not Path(value).is_absolute():
            values[name] = str((base / value).resolve())
    return values


def env_defaults():
    values = {}
    if os.environ.get('P2P_OUTPUT_DIR'):
        values['output_dir'] = os.environ['P2P_OUTPUT_DIR']
    if os.environ.get('P2P_WORKERS'):
        try:
            values['workers'] = int(os.environ['P2P_WORKERS'])
        except ValueError:
            raise ConfigError(f"P2P_WORKERS must be an integer, got {os.environ['P2P_WORKERS']}") from None
    return values


def load_config(path=None, **overrides):
    """Defaults <- environment <- TOML file <- explicit overrides (None values ignored)"""
    values = env_defaults()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, 'rb') as f:
                document = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML ({e})") from e
        values.update(_resolve_paths(_flatten(document, path), path.parent))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = replace(ScenarioConfig(), **values)
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.info(f"Scenario: {config.source} community, {config.mechanism} market, seed {config.seed}")
    return config.validate()
