"""Fleet statistics: POI-category shares, OD matrix, time-of-day profiles, lognormal fits."""

from __future__ import annotations

import configparser
import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConsistencyError, DegenerateFitError, DomainError, EmptyTableError
from .model import POI_CATEGORIES
from .trips import Trip, TripEnd

SECONDS_PER_DAY = 86400


# ------------------------------------------------------------------ lognormal


@dataclass(frozen=True)
class LogMoments:
    """Count, mean and summed squared deviation of log samples; merges exactly (pairwise update)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_samples(cls, samples) -> "LogMoments":
        x = np.asarray(samples, dtype=np.float64)
        if len(x) == 0:
            return cls()
        bad = np.flatnonzero(~(x > 0))
        if len(bad):
            raise DomainError(f"{len(bad)} non-positive samples, first at index {bad[0]}")
        logs = np.log(x)
        mean = float(logs.mean())
        return cls(len(x), mean, float(np.sum((logs - mean) ** 2)))

    def merge(self, other: "LogMoments") -> "LogMoments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return LogMoments(n, mean, m2)

    def fit(self) -> "LognormalFit":
        if self.n < 2:
            raise DegenerateFitError(f"need at least 2 samples, have {self.n}")
        sigma = math.sqrt(self.m2 / self.n)
        if not sigma > 0:
            raise DegenerateFitError("all samples equal; sigma would be 0")
        return LognormalFit(self.mean, sigma, self.n)


@dataclass(frozen=True)
class LognormalFit:
    mu: float
    sigma: float
    n: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise DegenerateFitError("sigma must be positive")

    @property
    def mode(self) -> float:
        return math.exp(self.mu - self.sigma**2)

    @property
    def median(self) -> float:
        return math.exp(self.mu)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = (np.log(x) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (x * self.sigma * math.sqrt(2 * math.pi))


def fit_lognormal(samples) -> LognormalFit:
    """Maximum-likelihood lognormal: mean and population std of the natural logs."""
    return LogMoments.from_samples(samples).fit()


# ------------------------------------------------------------------ categories


@dataclass
class CategoryShares:
    counts: dict
    uncategorized: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def shares(self) -> dict:
        t = self.total
        return {c: n / t for c, n in self.counts.items()}


def category_shares(ends: Iterable[TripEnd]) -> CategoryShares:
    """Proportion of categorized trip ends per POI category; uncategorized ends are only counted."""
    cnt: Counter = Counter()
    none = 0
    for e in ends:
        if e.matched_poi_category is None:
            none += 1
        else:
            cnt[e.matched_poi_category] += 1
    if not cnt:
        raise EmptyTableError("no trip end carries a POI category")
    known = [c for c in POI_CATEGORIES if c in cnt]
    extra = sorted(c for c in cnt if c not in POI_CATEGORIES)
    return CategoryShares({c: cnt[c] for c in known + extra}, none)


def intercity_ends(trips: Iterable[Trip]) -> list[TripEnd]:
    """Distinct trip ends that start or finish an intercity trip."""
    seen = {}
    for t in trips:
        if t.intercity:
            seen.setdefault(t.origin.trip_end_id, t.origin)
            seen.setdefault(t.destination.trip_end_id, t.destination)
    return list(seen.values())


# ------------------------------------------------------------------ OD matrix


@dataclass
class OdMatrix:
    city_ids: list
    counts: np.ndarray

    def __post_init__(self):
        self._pos = {c: i for i, c in enumerate(self.city_ids)}

    def entry(self, origin, destination) -> int:
        return int(self.counts[self._pos[origin], self._pos[destination]])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        for i, a in enumerate(self.city_ids):
            for j, b in enumerate(self.city_ids):
                yield a, b, int(self.counts[i, j])


def build_od_matrix(trips: Iterable[Trip], city_ids: Sequence) -> OdMatrix:
    """Directed counts of intercity trips, rows and columns in ``city_ids`` order."""
    ids = list(city_ids)
    pos = {c: i for i, c in enumerate(ids)}
    m = np.zeros((len(ids), len(ids)), dtype=np.int64)
    for t in trips:
        if not t.intercity:
            continue
        for c in (t.origin_city, t.destination_city):
            if c not in pos:
                raise ConsistencyError(f"trip {t.trip_id} references city {c!r} missing from the city list")
        m[pos[t.origin_city], pos[t.destination_city]] += 1
    return OdMatrix(ids, m)


# ------------------------------------------------------------------ time of day


def local_hour(ts, tz_offset_hours: float = 0.0):
    t = (np.asarray(ts, dtype=np.float64) + tz_offset_hours * 3600.0) % SECONDS_PER_DAY
    return np.floor(t / 3600.0).astype(np.int64)


def time_of_day_profiles(trips: Sequence[Trip], tz_offset_hours: float = 0.0):
    """Hourly (24-bin) counts of local departure and arrival times."""
    dep = local_hour([t.departure_ts for t in trips], tz_offset_hours)
    arr = local_hour([t.arrival_ts for t in trips], tz_offset_hours)
    return np.bincount(dep, minlength=24), np.bincount(arr, minlength=24)


# ------------------------------------------------------------------ distance / duration


@dataclass(frozen=True)
class LogHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def density(self) -> np.ndarray:
        n = self.counts.sum()
        return self.counts / (n * np.diff(self.edges)) if n else np.zeros(len(self.counts))


def log_histogram(samples, bins_per_decade: float = 10) -> LogHistogram:
    """Histogram on bins of equal log width, aligned to powers of ten."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0:
        return LogHistogram(np.array([1.0, 10.0]), np.zeros(1, dtype=np.int64))
    lo = math.floor(math.log10(x.min()) * bins_per_decade)
    hi = math.floor(math.log10(x.max()) * bins_per_decade) + 1
    edges = 10.0 ** (np.arange(lo, hi + 1) / bins_per_decade)
    k = np.floor(np.log10(x) * bins_per_decade).astype(np.int64) - lo
    k = np.clip(k, 0, hi - lo - 1)
    return LogHistogram(edges, np.bincount(k, minlength=hi - lo))


@dataclass
class DistanceDurationStats:
    distance_hist: LogHistogram
    duration_hist: LogHistogram
    distance_fit: Optional[LognormalFit]
    duration_fit: Optional[LognormalFit]
    errors: dict = field(default_factory=dict)


def distance_duration_stats(trips: Sequence[Trip], bins_per_decade: float = 10, strict: bool = True):
    """Log-binned histograms and lognormal fits of trip path distance (m) and duration (s).

    With ``strict=False`` fit errors are recorded in ``errors`` instead of raised.
    """
    if not trips:
        raise EmptyTableError("no trips")
    dist = np.array([t.path_distance for t in trips])
    dur = np.array([t.duration for t in trips])
    bad = [t.trip_id for t, d in zip(trips, dist) if not d > 0]
    if bad:
        raise DomainError(f"{len(bad)} trips with non-positive path distance: {', '.join(bad[:10])}")
    fits, errors = {}, {}
    for name, x in (("distance", dist), ("duration", dur)):
        try:
            fits[name] = fit_lognormal(x)
        except DegenerateFitError as exc:
            if strict:
                raise
            fits[name] = None
            errors[name] = str(exc)
    return DistanceDurationStats(
        log_histogram(dist, bins_per_decade),
        log_histogram(dur, bins_per_decade),
        fits["distance"],
        fits["duration"],
        errors,
    )


# ------------------------------------------------------------------ files


def write_od_matrix(od: OdMatrix, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("origin_city", "destination_city", "count"))
        w.writerows(od.rows())


def write_category_shares(tables: dict, path):
    """``tables`` maps a scope name (e.g. ``all``, ``intercity``) to CategoryShares or None."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("scope", "category", "count", "share"))
        for scope, table in tables.items():
            if table is None:
                continue
            for cat, share in table.shares.items():
                w.writerow((scope, cat, table.counts[cat], repr(share)))
            w.writerow((scope, "uncategorized", table.uncategorized, ""))


def write_profile(counts, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("hour", "count"))
        w.writerows((h, int(c)) for h, c in enumerate(counts))


def write_log_histogram(hist: LogHistogram, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin_low", "bin_high", "count", "density"))
        for lo, hi, c, d in zip(hist.edges[:-1], hist.edges[1:], hist.counts, hist.density):
            w.writerow((repr(float(lo)), repr(float(hi)), int(c), repr(float(d))))


def write_fits(result: DistanceDurationStats, path):
    cp = configparser.ConfigParser(interpolation=None)
    for name, fit, unit in (
        ("distance", result.distance_fit, "m"),
        ("duration", result.duration_fit, "s"),
    ):
        if fit is None:
            cp[name] = {"error": result.errors.get(name, "")}
        else:
            cp[name] = {
                "mu": repr(fit.mu),
                "sigma": repr(fit.sigma),
                "n": str(fit.n),
                "mode": repr(fit.mode),
                "unit": unit,
            }
    with open(path, "w") as fh:
        cp.write(fh)
