"""Archetype library and synthetic community generation.

Communities are drawn from a library of typical daily demand shapes by
stratified sampling, perturbed per prosumer and per day, then given a wind
generator share and a battery.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.data.ingest import SLOTS_PER_DAY
from src.exceptions import ConfigError, DegenerateInputError, SearchExhaustedError, ValidationError
from src.models.optimiser import size_assets
from src.models.profiles import (DEFAULT_STEP_HOURS, BatterySpec, GeneratorSpec, ProsumerSpec, TimeSeries)

logger = logging.getLogger(__name__)

DEFAULT_DAILY_KWH = (10.0, 3.0)
DEFAULT_DAY_NOISE = 0.1
CUT_IN_MS = 3.0
RATED_MS = 13.0
CUT_OUT_MS = 25.0


@dataclass(frozen=True, eq=False)
class Archetype:
    name: str
    weights: np.ndarray
    std: np.ndarray
    population_weight: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if weights.shape != (SLOTS_PER_DAY,) or std.shape != (SLOTS_PER_DAY,):
            raise ValidationError(f"archetype {self.name} needs {SLOTS_PER_DAY} weights and std values")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-6):
            raise ValidationError(f"archetype {self.name} weights must be >= 0 and sum to 1")
        if np.any(std < 0):
            raise ValidationError(f"archetype {self.name} std values must be >= 0")
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'std', std)


@dataclass(frozen=True)
class ArchetypeLibrary:
    archetypes: tuple

    def __post_init__(self):
        if not self.archetypes:
            raise ValidationError("archetype library must not be empty")
        total = sum(a.population_weight for a in self.archetypes)
        if any(a.population_weight < 0 for a in self.archetypes) or not math.isclose(total, 1.0, abs_tol=1e-6):
            raise ValidationError(f"population weights must be >= 0 and sum to 1, got {total}")

    @classmethod
    def from_counts(cls, shapes):
        """Build from (name, weights, std, population count) tuples"""
        total = float(sum(count for _, _, _, count in shapes))
        return cls(tuple(Archetype(name, w, s, count / total) for name, w, s, count in shapes))

    @property
    def names(self):
        return [a.name for a in self.archetypes]

    @property
    def population_weights(self):
        return np.array([a.population_weight for a in self.archetypes])

    def dominant(self):
        return max(range(len(self.archetypes)), key=lambda i: (self.archetypes[i].population_weight, -i))

    def to_json(self):
        return [{'name': a.name, 'weights': a.weights.tolist(), 'std': a.std.tolist(),
                 'population_weight': a.population_weight} for a in self.archetypes]


def _bumps(*bumps, base=0.15):
    """Daily shape from Gaussian bumps given as (hour, width_hours, height)"""
    hours = (np.arange(SLOTS_PER_DAY) + 0.5) / 2.0
    shape = np.full(SLOTS_PER_DAY, base)
    for hour, width, height in bumps:
        # wrap around midnight
        distance = np.minimum(np.abs(hours - hour), 24.0 - np.abs(hours - hour))
        shape += height * np.exp(-0.5 * (distance / width) ** 2)
    return shape / shape.sum()


def default_library():
    """Five archetypes of the reference population"""
    shapes = [
        ('evening peak', _bumps((7.5, 1.0, 0.35), (18.5, 1.8, 1.0)), 3910),
        ('work from home', _bumps((8.0, 1.0, 0.4), (13.0, 3.5, 0.55), (19.0, 1.8, 0.7)), 599),
        ('morning and evening peak', _bumps((7.0, 1.0, 0.9), (19.5, 1.5, 0.9)), 526),
        ('morning peak', _bumps((6.5, 1.2, 1.0), (19.0, 2.0, 0.3)), 169),
        ('night owl', _bumps((23.0, 1.8, 1.0), (1.5, 1.2, 0.5), (12.0, 2.0, 0.2)), 47),
    ]
    return ArchetypeLibrary.from_counts([(name, w, 0.3 * w, count) for name, w, count in shapes])


def load_library(path):
    """Read an archetype library JSON (list of {name, weights, std, population_weight})"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"archetype library not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    entries = document.get('archetypes', []) if isinstance(document, dict) else document
    try:
        archetypes = tuple(Archetype(e['name'], e['weights'], e['std'], float(e['population_weight']))
                           for e in entries)
        return ArchetypeLibrary(archetypes)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path}: malformed archetype entry ({e})") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e


def save_library(library, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'archetypes': library.to_json()}, f, indent=2)
    return path


def library_from_clustering(vectors, result, names=None):
    """Turn clustered daily shapes into a library: centroid, per-slot std, population share"""
    vectors = np.asarray(vectors, dtype=float)
    shapes = []
    for label in range(result.k):
        members = vectors[result.assignments == label]
        if len(members) == 0:
            continue
        centroid = np.clip(result.centroids[label], 0.0, None)
        centroid = centroid / centroid.sum() if centroid.sum() > 0 else np.full(SLOTS_PER_DAY, 1.0 / SLOTS_PER_DAY)
        name = names[label] if names and label < len(names) else f"cluster {label}"
        shapes.append((name, centroid, members.std(axis=0), len(members)))
    return ArchetypeLibrary.from_counts(shapes)


def stratified_counts(weights, size, rng):
    """Per-archetype counts matching the weights; leftover slots drawn by remainder"""
    weights = np.asarray(weights, dtype=float)
    exact = weights * size
    counts = np.floor(exact).astype(int)
    leftover = size - counts.sum()
    if leftover > 0:
        remainder = exact - counts
        chosen = rng.choice(len(weights), size=leftover, replace=False, p=remainder / remainder.sum())
        counts[chosen] += 1
    return counts


@dataclass(frozen=True, eq=False)
class _Draws:
    """Random draws of a community, kept apart from the noise scale applied to them"""
    archetypes: np.ndarray
    daily_kwh: np.ndarray
    slot_noise: np.ndarray
    day_noise: np.ndarray


def _draw(library, size, days, rng, mixture=None, daily_kwh=DEFAULT_DAILY_KWH):
    counts = stratified_counts(library.population_weights if mixture is None else mixture, size, rng)
    archetypes = rng.permutation(np.repeat(np.arange(len(counts)), counts))
    mean, std = daily_kwh
    kwh = np.maximum(rng.normal(mean, std, size), 0.1 * mean)
    return _Draws(archetypes, kwh, rng.standard_normal((size, SLOTS_PER_DAY)), rng.standard_normal((size, days)))


def _demands(library, draws, horizon, noise_scale=1.0, day_noise=DEFAULT_DAY_NOISE):
    """Demand arrays (kW, one row per prosumer) realised from draws"""
    if draws.day_noise.shape[1] * SLOTS_PER_DAY < horizon:
        raise ValidationError("not enough days drawn for the horizon")
    demands = np.empty((len(draws.archetypes), horizon))
    for row, index in enumerate(draws.archetypes):
        archetype = library.archetypes[index]
        shape = np.clip(archetype.weights + noise_scale * archetype.std * draws.slot_noise[row], 0.0, None)
        shape = shape / shape.sum() if shape.sum() > 0 else archetype.weights
        factors = np.clip(1.0 + noise_scale * day_noise * draws.day_noise[row], 0.0, None)
        energy = np.outer(factors, shape).reshape(-1)[:horizon] * draws.daily_kwh[row]
        demands[row] = energy / DEFAULT_STEP_HOURS
    return demands


def _days_for(horizon, step_duration):
    if not math.isclose(step_duration, DEFAULT_STEP_HOURS):
        raise ValidationError(f"archetypes are half-hourly; step duration must be {DEFAULT_STEP_HOURS} h")
    return -(-horizon // SLOTS_PER_DAY)


def _prosumers(demands, resource, step_duration, generator_kw, battery, tariffs, sizing, prefix='p'):
    prosumers = []
    width = max(3, len(str(len(demands))))
    for row, demand in enumerate(demands):
        prosumer = ProsumerSpec(
            id=f"{prefix}{row:0{width}d}",
            demand=TimeSeries(demand, step_duration),
            generator=GeneratorSpec(generator_kw, resource, **(sizing or {}).get('generator', {})),
            battery=battery,
        )
        if tariffs is not None:
            prosumer = size_assets(prosumer, tariffs, **(sizing or {}).get('grids', {}))
        prosumers.append(prosumer)
    return prosumers


def synthesize_community(library, size, seed, horizon=17520, step_duration=DEFAULT_STEP_HOURS,
                         daily_kwh=DEFAULT_DAILY_KWH, day_noise=DEFAULT_DAY_NOISE, resource=None,
                         generator_kw=0.0, battery=None, tariffs=None, sizing=None):
    """Seeded synthetic community.

    When `tariffs` is given every prosumer's generator share and battery are
    sized to minimise its standalone bill; otherwise `generator_kw` and
    `battery` are attached unchanged.
    """
    if size < 1:
        raise ValidationError(f"community size must be >= 1, got {size}")
    rng = np.random.default_rng(seed)
    draws = _draw(library, size, _days_for(horizon, step_duration), rng, daily_kwh=daily_kwh)
    demands = _demands(library, draws, horizon, 1.0, day_noise)
    if resource is None:
        resource = synthesize_wind_resource(horizon, seed, step_duration)
    logger.info(f"Synthesized {size} prosumers over {horizon} steps (seed {seed})")
    return _prosumers(demands, resource, step_duration, generator_kw, battery or BatterySpec(), tariffs, sizing)


def archetype_counts(library, community_size, seed):
    """How many prosumers of each archetype a seeded community contains"""
    rng = np.random.default_rng(seed)
    counts = stratified_counts(library.population_weights, community_size, rng)
    return dict(zip(library.names, counts.tolist()))


def diversity_factor(demands):
    """Σ individual peaks / aggregate peak"""
    arrays = [d.values if isinstance(d, TimeSeries) else np.asarray(d, dtype=float) for d in demands]
    if not arrays:
        raise ValidationError("diversity factor needs at least one demand profile")
    if len({a.shape for a in arrays}) > 1:
        raise ValidationError("demand profiles must share a horizon")
    stacked = np.vstack(arrays)
    aggregate_peak = stacked.sum(axis=0).max()
    if aggregate_peak <= 0:
        raise DegenerateInputError("diversity factor undefined for an all-zero aggregate demand")
    return float(stacked.max(axis=1).sum() / aggregate_peak)


def _bisect_noise(library, draws, horizon, day_noise, target, tolerance, max_noise, steps=40):
    """Noise scale whose community DF is within tolerance of target, or the closest found"""
    def df_at(scale):
        return diversity_factor(_demands(library, draws, horizon, scale, day_noise))

    lo, hi = 0.0, max_noise
    df_lo, df_hi = df_at(lo), df_at(hi)
    best = min(((abs(df_lo - target), lo, df_lo), (abs(df_hi - target), hi, df_hi)))
    if not df_lo <= target <= df_hi:
        return best[1], best[2]
    for _ in range(steps):
        if best[0] <= tolerance:
            break
        mid = 0.5 * (lo + hi)
        df_mid = df_at(mid)
        best = min(best, (abs(df_mid - target), mid, df_mid))
        if df_mid < target:
            lo = mid
        else:
            hi = mid
    return best[1], best[2]


def generate_for_df(library, size, target_df, tolerance=0.05, seed=0, horizon=17520,
                    step_duration=DEFAULT_STEP_HOURS, max_attempts=50, max_noise=6.0,
                    day_noise=DEFAULT_DAY_NOISE, **community_kwargs):
    """Community whose load diversity factor is within `tolerance` of `target_df`.

    Each attempt resamples the archetype mix (biased toward the dominant
    archetype for low targets) and bisects the profile noise scale.
    """
    if target_df < 1.0:
        raise ValidationError(f"diversity factor is >= 1 by definition, got target {target_df}")
    if tolerance < 0:
        raise ValidationError("tolerance must be nonnegative")
    rng = np.random.default_rng(seed)
    days = _days_for(horizon, step_duration)
    resource = community_kwargs.pop('resource', None)
    if resource is None:
        resource = synthesize_wind_resource(horizon, seed, step_duration)

    weights = library.population_weights
    dominant = np.eye(len(weights))[library.dominant()]
    best_df, best_gap = None, math.inf
    for attempt in range(max_attempts):
        if target_df - 1.0 <= tolerance:
            mixture = dominant
        elif attempt == 0:
            mixture = weights
        else:
            bias = rng.uniform(0.0, 1.0)
            mixture = bias * dominant + (1.0 - bias) * rng.dirichlet(weights * 20.0 + 0.05)
        draws = _draw(library, size, days, rng, mixture=mixture,
                      daily_kwh=community_kwargs.get('daily_kwh', DEFAULT_DAILY_KWH))
        if target_df - 1.0 <= tolerance:
            scale, realised = 0.0, diversity_factor(_demands(library, draws, horizon, 0.0, day_noise))
        else:
            scale, realised = _bisect_noise(library, draws, horizon, day_noise, target_df, tolerance, max_noise)
        gap = abs(realised - target_df)
        if gap < best_gap:
            best_df, best_gap = realised, gap
        if gap <= tolerance:
            logger.info(f"DF target {target_df}: realised {realised:.3f} after {attempt + 1} attempts")
            demands = _demands(library, draws, horizon, scale, day_noise)
            return _prosumers(
                demands, resource, step_duration,
                community_kwargs.get('generator_kw', 0.0),
                community_kwargs.get('battery') or BatterySpec(),
                community_kwargs.get('tariffs'),
                community_kwargs.get('sizing'),
            )
    raise SearchExhaustedError(
        f"no community within {tolerance} of DF {target_df} after {max_attempts} attempts "
        f"(best {best_df:.3f})", best_df=best_df)


def _power_curve(speed):
    """Normalised output of a community turbine for wind speeds in m/s"""
    ramp = (speed ** 3 - CUT_IN_MS ** 3) / (RATED_MS ** 3 - CUT_IN_MS ** 3)
    output = np.where(speed < CUT_IN_MS, 0.0, np.where(speed < RATED_MS, ramp, 1.0))
    return np.where(speed >= CUT_OUT_MS, 0.0, output)


def synthesize_wind_resource(horizon, seed, step_duration=DEFAULT_STEP_HOURS, scale_ms=8.0,
                             persistence=0.97):
    """Normalised wind output from autocorrelated Weibull(k=2) wind speeds"""
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    rng = np.random.default_rng([seed, 0x57494E44])
    noise = rng.standard_normal((2, horizon))
    innovation = math.sqrt(1.0 - persistence ** 2)
    state = np.empty((2, horizon))
    state[:, 0] = noise[:, 0]
    for t in range(1, horizon):
        state[:, t] = persistence * state[:, t - 1] + innovation * noise[:, t]
    # two unit Gaussians give a Rayleigh (Weibull k=2) magnitude
    speed = scale_ms * np.sqrt((state ** 2).sum(axis=0) / 2.0)
    return TimeSeries(np.clip(_power_curve(speed), 0.0, 1.0), step_duration)
