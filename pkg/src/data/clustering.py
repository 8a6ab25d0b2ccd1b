"""K-means clustering of winter weekday demand shapes.

Daily averages are taken over December to March with Fridays, weekends and
bank holidays removed, normalised with the L1 norm, and clustered with
k-means; k is chosen with the elbow and silhouette methods.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from dateutil.relativedelta import MO
from pandas.tseries.holiday import (AbstractHolidayCalendar, EasterMonday, GoodFriday, Holiday, next_monday,
                                    next_monday_or_tuesday)
from pandas.tseries.offsets import DateOffset

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

try:
    from sklearn.cluster import KMeans
    from sklearn.metrics import silhouette_score
    SKLEARN_AVAILABLE = True
except ImportError:
    SKLEARN_AVAILABLE = False
    logger.warning("scikit-learn not available. Install with: pip install scikit-learn")

from src.data.ingest import SLOTS_PER_DAY
from src.exceptions import DegenerateInputError, ValidationError
from src.models.profiles import TimeSeries

WINTER_MONTHS = (12, 1, 2, 3)
# Friday to Sunday
EXCLUDED_WEEKDAYS = (4, 5, 6)
MIN_SILHOUETTE = 0.25
MAX_ITER = 300


class EnglandBankHolidays(AbstractHolidayCalendar):
    rules = [
        Holiday("New Year's Day", month=1, day=1, observance=next_monday),
        GoodFriday,
        EasterMonday,
        Holiday('Early May bank holiday', month=5, day=1, offset=DateOffset(weekday=MO(1))),
        Holiday('Spring bank holiday', month=5, day=31, offset=DateOffset(weekday=MO(-1))),
        Holiday('Summer bank holiday', month=8, day=31, offset=DateOffset(weekday=MO(-1))),
        Holiday('Christmas Day', month=12, day=25, observance=next_monday),
        Holiday('Boxing Day', month=12, day=26, observance=next_monday_or_tuesday),
    ]


def england_bank_holidays(start, end):
    return {ts.date() for ts in EnglandBankHolidays().holidays(start=start, end=end)}


@dataclass(frozen=True)
class ProfileCalendar:
    """Dates of the days a profile covers and the holidays to skip"""
    start: object
    holidays: frozenset = None

    def days(self, n_days):
        dates = pd.date_range(pd.Timestamp(self.start), periods=n_days, freq='D')
        return [d.date() for d in dates]

    def holiday_set(self, n_days):
        if self.holidays is not None:
            return {pd.Timestamp(h).date() for h in self.holidays}
        dates = self.days(n_days)
        return england_bank_holidays(dates[0], dates[-1])

    def retained(self, n_days):
        """Mask of winter weekdays (Monday to Thursday) that are not holidays"""
        holidays = self.holiday_set(n_days)
        return np.array([d.month in WINTER_MONTHS and d.weekday() not in EXCLUDED_WEEKDAYS
                         and d not in holidays for d in self.days(n_days)])


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    silhouette: float

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


@dataclass(frozen=True)
class KSelection:
    inertia: dict
    silhouette: dict
    elbow: int
    chosen: int
    results: dict = field(default_factory=dict, repr=False)

    def as_frame(self):
        return pd.DataFrame({'k': list(self.inertia), 'inertia': list(self.inertia.values()),
                             'silhouette': [self.silhouette[k] for k in self.inertia]})


def winter_weekday_average(profile, calendar):
    """L1-normalised mean day over the retained winter weekdays"""
    values = profile.values if isinstance(profile, TimeSeries) else np.asarray(profile, dtype=float)
    if values.size % SLOTS_PER_DAY:
        raise ValidationError(f"profile length {values.size} is not a whole number of days")
    days = values.reshape(-1, SLOTS_PER_DAY)
    mask = calendar.retained(len(days))
    if not mask.any():
        raise DegenerateInputError("no winter weekdays left after filtering")
    mean = days[mask].mean(axis=0)
    total = np.abs(mean).sum()
    return mean / total if total > 0 else mean


def _silhouette(vectors, labels, k):
    if not 2 <= k <= len(vectors) - 1 or len(np.unique(labels)) < 2:
        return 0.0
    return float(silhouette_score(vectors, labels))


def kmeans(vectors, k, seed=0):
    """Lloyd's k-means with k-means++ seeding, deterministic for a seed"""
    if not SKLEARN_AVAILABLE:
        raise ImportError("scikit-learn is required for clustering")
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise ValidationError("kmeans needs a non-empty 2-d array of vectors")
    if not 1 <= k <= len(vectors):
        raise ValidationError(f"k must be in 1..{len(vectors)}, got {k}")
    model = KMeans(n_clusters=k, init='k-means++', n_init=1, max_iter=MAX_ITER, random_state=seed)
    labels = model.fit_predict(vectors)
    return ClusteringResult(
        k=k,
        assignments=labels,
        centroids=model.cluster_centers_,
        inertia=max(float(model.inertia_), 0.0),
        silhouette=_silhouette(vectors, labels, k),
    )


def elbow_point(inertia):
    """k furthest below the chord joining the first and last inertia values"""
    ks = sorted(inertia)
    if len(ks) < 3:
        return ks[0]
    x = np.array(ks, dtype=float)
    y = np.array([inertia[k] for k in ks])
    span = y[0] - y[-1]
    if span <= 0:
        return ks[0]
    chord = y[0] - span * (x - x[0]) / (x[-1] - x[0])
    return int(ks[int(np.argmax(chord - y))])


def select_k(vectors, k_range, seed=0):
    """Inertia and silhouette per k; the best silhouette near the elbow is chosen.

    When no k reaches a silhouette of 0.25 the data shows no cluster
    structure and the smallest k of the range is returned.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValidationError("k range must not be empty")
    results = {k: kmeans(vectors, k, seed) for k in ks}
    inertia = {k: r.inertia for k, r in results.items()}
    silhouette = {k: r.silhouette for k, r in results.items()}
    elbow = elbow_point(inertia)
    window = [k for k in ks if abs(k - elbow) <= 1] if len(ks) >= 3 else ks
    best = max(window, key=lambda k: (silhouette[k], -k))
    chosen = best if silhouette[best] >= MIN_SILHOUETTE else ks[0]
    logger.info(f"k selection over {ks}: elbow at {elbow}, chosen k={chosen} "
                f"(silhouette {silhouette[chosen]:.3f})")
    return KSelection(inertia, silhouette, elbow, chosen, results)


def merge_clusters(result, groups, vectors=None):
    """Collapse groups of cluster labels into single clusters.

    Labels not named in any group keep their own cluster; new labels are
    numbered in order of their smallest original label. Centroids become
    member-weighted means; inertia and silhouette are recomputed when the
    vectors are given.
    """
    mapping = {}
    for group in groups:
        group = sorted(set(group))
        for label in group:
            if label in mapping or not 0 <= label < result.k:
                raise ValidationError(f"label {label} invalid or listed in more than one group")
            mapping[label] = group[0]
    representatives = sorted({mapping.get(label, label) for label in range(result.k)})
    renumber = {rep: i for i, rep in enumerate(representatives)}
    new_label = np.array([renumber[mapping.get(label, label)] for label in range(result.k)])

    assignments = new_label[result.assignments]
    sizes = result.sizes
    k = len(representatives)
    centroids = np.zeros((k, result.centroids.shape[1]))
    counts = np.zeros(k)
    for label in range(result.k):
        centroids[new_label[label]] += sizes[label] * result.centroids[label]
        counts[new_label[label]] += sizes[label]
    centroids = centroids / np.maximum(counts, 1)[:, None]

    inertia, silhouette = result.inertia, result.silhouette
    if vectors is not None:
        vectors = np.asarray(vectors, dtype=float)
        inertia = float(((vectors - centroids[assignments]) ** 2).sum())
        silhouette = _silhouette(vectors, assignments, k)
    logger.info(f"Merged {result.k} clusters into {k}")
    return ClusteringResult(k, assignments, centroids, inertia, silhouette)
