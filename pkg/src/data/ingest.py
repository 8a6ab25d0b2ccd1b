"""CSV ingestion of half-hourly demand profiles and wind resource series."""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.exceptions import ConfigError, DimensionError, ProfileParseError
from src.models.profiles import DEFAULT_STEP_HOURS, TimeSeries

logger = logging.getLogger(__name__)

SLOTS_PER_DAY = 48
SLOT_COLUMNS = [f"hh{i:02d}" for i in range(1, SLOTS_PER_DAY + 1)]
PROFILE_COLUMNS = ['id', 'date'] + SLOT_COLUMNS


def _read_csv(path, **kwargs):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    if path.stat().st_size == 0:
        return None
    try:
        return pd.read_csv(path, **kwargs)
    except pd.errors.EmptyDataError:
        return None
    except pd.errors.ParserError as e:
        raise ProfileParseError(f"{path}: {e}") from e


def load_profile_frame(path):
    """Validated long frame (one row per prosumer-day) sorted by id and date"""
    frame = _read_csv(path, dtype={'id': str, 'date': str})
    if frame is None or frame.empty:
        return pd.DataFrame(columns=PROFILE_COLUMNS)
    missing = [c for c in PROFILE_COLUMNS if c not in frame.columns]
    if missing:
        raise ProfileParseError(f"{path}: missing columns {missing[:5]}")

    # header is row 1
    for offset, record in enumerate(frame.itertuples(index=False)):
        row = offset + 2
        if pd.isna(record.id) or not str(record.id).strip():
            raise ProfileParseError(f"{path}: empty prosumer id", row=row)
    values = frame[SLOT_COLUMNS].apply(pd.to_numeric, errors='coerce')
    bad = values.isna().any(axis=1) & frame[SLOT_COLUMNS].notna().all(axis=1)
    for mask, problem in ((frame[SLOT_COLUMNS].isna().any(axis=1), 'missing half-hour value'),
                          (bad, 'non-numeric half-hour value'),
                          ((values < 0).any(axis=1), 'negative demand')):
        if mask.any():
            row = int(np.flatnonzero(mask.to_numpy())[0]) + 2
            raise ProfileParseError(f"{path}: {problem}", row=row)
    dates = pd.to_datetime(frame['date'], errors='coerce')
    if dates.isna().any():
        row = int(np.flatnonzero(dates.isna().to_numpy())[0]) + 2
        raise ProfileParseError(f"{path}: invalid date '{frame['date'].iloc[row - 2]}'", row=row)

    frame = frame.assign(id=frame['id'].str.strip(), date=dates)
    frame[SLOT_COLUMNS] = values.astype(float)
    duplicated = frame.duplicated(['id', 'date'])
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0]) + 2
        raise ProfileParseError(f"{path}: duplicate day for prosumer", row=row)
    return frame.sort_values(['id', 'date'], kind='stable').reset_index(drop=True)


def load_profiles(path, step_duration=DEFAULT_STEP_HOURS):
    """Read `id,date,hh01..hh48` into [(id, TimeSeries)] with one series per prosumer"""
    frame = load_profile_frame(path)
    if frame.empty:
        logger.warning(f"No profiles in {path}")
        return []
    profiles = []
    for prosumer_id, days in frame.groupby('id', sort=True):
        series = TimeSeries(days[SLOT_COLUMNS].to_numpy().reshape(-1), step_duration)
        profiles.append((prosumer_id, series))
    lengths = {series.horizon for _, series in profiles}
    if len(lengths) > 1:
        counts = ', '.join(f"{pid}={s.horizon // SLOTS_PER_DAY}d" for pid, s in profiles[:5])
        raise DimensionError(f"{path}: ragged horizons across prosumers ({counts})")
    logger.info(f"Loaded {len(profiles)} profiles of {profiles[0][1].horizon} steps from {path}")
    return profiles


def profile_start_dates(path):
    """First recorded date of every prosumer in a profile CSV"""
    frame = load_profile_frame(path)
    return {pid: days['date'].min().date() for pid, days in frame.groupby('id', sort=True)}


def load_wind_resource(path, horizon, step_duration=DEFAULT_STEP_HOURS):
    """Read `timestamp,norm_output` and return the first `horizon` steps"""
    frame = _read_csv(path)
    if frame is None or 'norm_output' not in frame.columns:
        raise ProfileParseError(f"{path}: expected columns timestamp,norm_output")
    output = pd.to_numeric(frame['norm_output'], errors='coerce')
    invalid = output.isna() | (output < 0) | (output > 1)
    if invalid.any():
        row = int(np.flatnonzero(invalid.to_numpy())[0]) + 2
        raise ProfileParseError(f"{path}: norm_output must be a number in [0, 1]", row=row)
    if len(output) < horizon:
        raise DimensionError(f"{path}: {len(output)} steps do not cover a horizon of {horizon}")
    return TimeSeries(output.to_numpy(float)[:horizon], step_duration)


def write_profiles(profiles, path, start_date='2020-01-01'):
    """Write [(id, TimeSeries)] back as `id,date,hh01..hh48` rows"""
    rows = []
    for prosumer_id, series in profiles:
        days = series.values.reshape(-1, SLOTS_PER_DAY)
        for day, values in zip(pd.date_range(start_date, periods=len(days), freq='D'), days):
            rows.append([prosumer_id, day.strftime('%Y-%m-%d')] + values.tolist())
    frame = pd.DataFrame(rows, columns=PROFILE_COLUMNS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path
