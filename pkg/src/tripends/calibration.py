"""Data-driven thresholds from empirical distributions.

* speed threshold: where the speed histogram stops being rough,
* dwell thresholds: break of a broken power law and onset of an irregular tail,
* POI radii: histogram peak of stop-to-POI distances and the doubled-CDF radius.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DomainError,
    FitFailureError,
    InsufficientDataError,
    RadiusUnreachableError,
)
from .model import DEFAULT_POI_RADII, PoiCategoryParams

# pseudo-count given to empty bins before taking logs
EMPTY_BIN_COUNT = 0.1


@dataclass
class Histogram:
    """Fixed-width, left-closed histogram. Mergeable when width and origin agree."""

    bin_width: float
    origin: float
    counts: np.ndarray
    n_rejected: int = 0

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "Histogram") -> "Histogram":
        if other.bin_width != self.bin_width or other.origin != self.origin:
            raise ValueError("histograms with different binning cannot be merged")
        n = max(len(self.counts), len(other.counts))
        counts = np.zeros(n, dtype=np.int64)
        counts[: len(self.counts)] += self.counts
        counts[: len(other.counts)] += other.counts
        return Histogram(self.bin_width, self.origin, counts, self.n_rejected + other.n_rejected)


def build_histogram(samples, bin_width: float, origin: float = 0.0) -> Histogram:
    """Sample ``x`` goes to bin ``floor((x - origin) / bin_width)``; samples below ``origin`` are counted as rejected."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    x = np.asarray(samples, dtype=np.float64)
    below = x < origin
    idx = np.floor((x[~below] - origin) / bin_width).astype(np.int64)
    counts = np.bincount(idx) if len(idx) else np.zeros(0, dtype=np.int64)
    return Histogram(bin_width, origin, counts, int(below.sum()))


@dataclass(frozen=True)
class Detection:
    value: float
    fallback: bool = False


def _log_with_floor(values, floor_values):
    return np.log(np.where(values > 0, values, floor_values))


def successive_roughness(logs, window: int, trailing: bool = False) -> np.ndarray:
    """Mean absolute successive difference of ``logs`` over ``window`` differences.

    Forward (default): entry ``k`` covers the steps k->k+1 ... k+w-1->k+w.
    Trailing: entry ``k`` covers the steps k-w->k-w+1 ... k-1->k.
    Entries without a full window are NaN.
    """
    d = np.abs(np.diff(logs))
    n = len(logs)
    out = np.full(n, np.nan)
    if len(d) < window:
        return out
    c = np.concatenate([[0.0], np.cumsum(d)])
    means = (c[window:] - c[:-window]) / window  # means[j] covers d[j:j+w]
    if trailing:
        out[window:] = means
    else:
        out[: len(means)] = means
    return out


def detect_speed_threshold(
    hist: Histogram,
    window: int = 5,
    smoothness_ratio: float = 0.2,
    default: float = 1.1,
    min_populated: int = 10,
) -> Detection:
    """Left edge of the first bin where the speed distribution turns smooth.

    Roughness is the mean absolute step of the log normalized counts over the
    next ``window`` bins. Returns ``default`` flagged as fallback when no bin
    qualifies.
    """
    counts = hist.counts
    populated = np.count_nonzero(counts)
    if populated < min_populated:
        raise InsufficientDataError(f"speed histogram has {populated} populated bins, need {min_populated}")
    last = int(np.flatnonzero(counts)[-1])
    counts = counts[: last + 1]
    total = counts.sum()
    logs = _log_with_floor(counts / total, EMPTY_BIN_COUNT / total)
    rough = successive_roughness(logs, window)
    hits = np.flatnonzero(rough < smoothness_ratio)
    if len(hits) == 0:
        return Detection(default, True)
    return Detection(float(hist.origin + hits[0] * hist.bin_width))


@dataclass(frozen=True)
class LogBinned:
    """Log-spaced histogram.

    On lattice data (all samples multiples of a resolution ``q``) a bin's
    effective width is ``q`` times the number of lattice points it contains,
    and its center is the geometric mean of the lattice points it holds.
    Bins holding no lattice point have zero width and are not usable.
    """

    edges: np.ndarray
    counts: np.ndarray
    n: int
    widths: Optional[np.ndarray] = None
    mids: Optional[np.ndarray] = None

    @property
    def centers(self) -> np.ndarray:
        if self.mids is not None:
            return self.mids
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.edges) if self.widths is None else self.widths

    @property
    def usable(self) -> np.ndarray:
        return self.bin_widths > 0

    @property
    def density(self) -> np.ndarray:
        w = self.bin_widths
        out = np.zeros(len(self.counts))
        ok = w > 0
        out[ok] = self.counts[ok] / (self.n * w[ok])
        return out


def lattice_step(samples) -> Optional[float]:
    """Greatest common divisor of the samples when all are whole numbers, else None."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0 or np.any(x != np.round(x)) or np.any(np.abs(x) > 2**53):
        return None
    g = int(np.gcd.reduce(np.abs(x).astype(np.int64)))
    return float(g) if g > 0 else None


def log_binned(samples, bins_per_decade: float = 50, resolution: Optional[float] = None) -> LogBinned:
    """Logarithmic bins spanning ``[min, max]`` of positive samples, ``bins_per_decade`` per factor of ten.

    ``resolution`` declares the samples to be multiples of that step (e.g. a
    fixed sampling cadence) and switches to lattice-aware widths.
    """
    x = np.asarray(samples, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("log binning needs strictly positive samples")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        raise FitFailureError("all samples identical; a single populated bin")
    n_bins = max(1, int(math.ceil(bins_per_decade * math.log10(hi / lo) - 1e-9)))
    edges = np.geomspace(lo, hi, n_bins + 1)
    edges[0], edges[-1] = lo, hi
    counts, _ = np.histogram(x, bins=edges)
    if resolution is None:
        return LogBinned(edges, counts, len(x))
    q = float(resolution)
    if not q > 0:
        raise ValueError("resolution must be positive")
    # assign every lattice point to a bin exactly as np.histogram assigns samples
    lattice = np.arange(math.ceil(lo / q - 1e-9), math.floor(hi / q + 1e-9) + 1) * q
    idx = np.clip(np.searchsorted(edges, lattice, side="right") - 1, 0, n_bins - 1)
    points = np.bincount(idx, minlength=n_bins)
    log_sum = np.bincount(idx, weights=np.log(lattice), minlength=n_bins)
    mids = np.sqrt(edges[:-1] * edges[1:])
    has = points > 0
    mids[has] = np.exp(log_sum[has] / points[has])
    return LogBinned(edges, counts, len(x), points * q, mids)


@dataclass(frozen=True)
class BrokenPowerLawFit:
    alpha1: float
    alpha2: float
    break_point: float
    fit_error: float
    intercept1: float = 0.0
    intercept2: float = 0.0

    def density(self, x):
        """Fitted piecewise density (base-10 log-log lines) at ``x``."""
        lx = np.log10(np.asarray(x, dtype=np.float64))
        low = self.intercept1 - self.alpha1 * lx
        high = self.intercept2 - self.alpha2 * lx
        return 10 ** np.where(np.asarray(x) < self.break_point, low, high)


def fit_broken_power_law(
    samples,
    break_range: Optional[tuple] = None,
    bins_per_decade: float = 50,
    min_samples: int = 1000,
    min_segment_bins: int = 20,
    resolution: Optional[float] = None,
) -> BrokenPowerLawFit:
    """Two least-squares line segments in log-log space, joined at the best bin edge.

    Parameters
    ----------
    samples : array_like
        Positive values (e.g. dwell times in seconds).
    break_range : (low, high), optional
        Candidate break points are bin edges inside this range; default all.
    bins_per_decade : float
        Density of the logarithmic bins over the sample range.
    min_segment_bins : int
        Populated bins required on each side of a candidate break, relaxed
        down to 2 when the histogram is too short. Short end segments would
        otherwise chase bin noise.
    resolution : float, optional
        Sample lattice step, see ``log_binned``.

    Returns
    -------
    BrokenPowerLawFit
        Exponents are the negated slopes of log10 density against log10 x;
        ``fit_error`` is the total squared residual over both segments.

    Notes
    -----
    The two segments share their value at the break, which pins the break down far
    better than two free lines when the density has a kink rather than a jump.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < min_samples:
        raise InsufficientDataError(f"{len(x)} samples, need {min_samples}")
    lb = log_binned(x, bins_per_decade, resolution)
    pop = np.flatnonzero(lb.counts > 0)
    lx = np.log10(lb.centers[pop])
    ly = np.log10(lb.density[pop])
    m = len(lx)
    # candidate j splits points [0, j) from [j, m) at the upper edge of bin pop[j-1]
    side = max(2, min(min_segment_bins, m // 2))
    j = np.arange(side, m - side + 1)
    if len(j) == 0:
        raise FitFailureError(f"only {m} populated bins; need at least 2 on each side of a break")
    edges = lb.edges[pop[j - 1] + 1]
    if break_range is not None:
        lo, hi = break_range
        keep = (edges >= lo) & (edges <= hi)
        j, edges = j[keep], edges[keep]
        if len(j) == 0:
            raise FitFailureError("no candidate break inside the requested range")
    best = None
    for b in np.log10(edges):
        design = np.column_stack([np.ones(m), lx, np.maximum(lx - b, 0.0)])
        coef = np.linalg.lstsq(design, ly, rcond=None)[0]
        sse = float(np.sum((design @ coef - ly) ** 2))
        if best is None or sse < best[0]:
            best = (sse, b, coef)
    sse, b, (c0, s1, s2) = best
    if not np.all(np.isfinite([c0, s1, s2])):
        raise FitFailureError("degenerate log-log points")
    return BrokenPowerLawFit(
        alpha1=float(-s1),
        alpha2=float(-(s1 + s2)),
        break_point=float(10**b),
        fit_error=sse,
        intercept1=float(c0),
        intercept2=float(c0 - s2 * b),
    )


@dataclass(frozen=True)
class TimeThresholds:
    t_min: float
    t_max: float
    fit: Optional[BrokenPowerLawFit]
    t_min_fallback: bool = False
    t_max_fallback: bool = False


def detect_time_thresholds(
    samples,
    bins_per_decade: float = 50,
    window: int = 10,
    irregularity_ratio: float = 1.0,
    default_t_min: float = 1440.0,
    default_t_max: float = 46800.0,
    min_samples: int = 1000,
    break_range: Optional[tuple] = None,
    min_count: int = 10,
    min_segment_bins: int = 20,
    resolution: Optional[float] = None,
) -> TimeThresholds:
    """Minimum dwell threshold at the power-law break, maximum at the onset of an irregular tail.

    The tail onset is the left edge of the first bin past the break whose
    trailing ``window`` of log-density steps has mean magnitude above
    ``irregularity_ratio``. The break is searched on the dense body of the
    distribution, i.e. below the first run of ``window`` bins (past the modal
    bin) each holding fewer than ``min_count`` samples, and below the maximum threshold (detected, or
    the default when no irregular tail shows): stops at or above it are
    long-term stops, which the power law does not describe.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < min_samples:
        raise InsufficientDataError(f"{len(x)} samples, need {min_samples}")
    lb = log_binned(x, bins_per_decade, resolution)
    use = np.flatnonzero(lb.usable)
    counts = lb.counts[use]
    # a sparse tail would otherwise pull the break onto the body/tail cliff
    peak = int(np.argmax(counts))
    sparse = (counts[peak:] < min_count).astype(np.int64)
    run = min(window, len(sparse))
    # the tail starts at the first run of `window` sparse bins; single dips are noise
    runs = np.flatnonzero(np.convolve(sparse, np.ones(run, dtype=np.int64), mode="valid") == run) if run else []
    upper = math.inf
    if len(runs):
        # drop the bin straddling the body edge as well
        upper = float(lb.edges[use[max(peak + runs[0] - 1, 1)]])

    def fit_below(limit):
        body = x[x < limit]
        return fit_broken_power_law(
            body, break_range, bins_per_decade, min(min_samples, len(body)), min_segment_bins, resolution
        )

    fit = fit_below(upper)
    widths = lb.bin_widths[use]
    logs = _log_with_floor(lb.density[use], EMPTY_BIN_COUNT / (lb.n * widths))
    rough = successive_roughness(logs, window, trailing=True)
    left = lb.edges[:-1][use]
    hits = np.flatnonzero((left > fit.break_point) & (rough > irregularity_ratio))
    t_max_fallback = len(hits) == 0
    t_max = default_t_max if t_max_fallback else float(left[hits[0]])
    if fit.break_point < t_max < upper:
        try:
            fit = fit_below(t_max)
        except (FitFailureError, InsufficientDataError):
            pass
    if t_max > fit.break_point:
        return TimeThresholds(fit.break_point, t_max, fit, t_max_fallback=t_max_fallback)
    return TimeThresholds(default_t_min, default_t_max, fit, True, True)


def detect_poi_radii(
    distances,
    category: str,
    bin_width: float = 5.0,
    max_distance: float = 2000.0,
    smoothing_window: int = 3,
    min_samples: int = 500,
) -> PoiCategoryParams:
    """Valid radius at the smoothed histogram peak; POI radius where the CDF doubles.

    The CDF is the empirical CDF over all samples, so the returned POI radius
    always satisfies ``CDF(poi_radius) >= 2 * CDF(valid_radius)`` exactly.
    """
    d = np.sort(np.asarray(distances, dtype=np.float64))
    n = len(d)
    if n < min_samples:
        raise InsufficientDataError(f"{category}: {n} distance samples, need {min_samples}")
    n_bins = int(math.ceil(max_distance / bin_width))
    inside = d[(d >= 0) & (d < max_distance)]
    counts = np.bincount(np.floor(inside / bin_width).astype(np.int64), minlength=n_bins)[:n_bins]
    kernel = np.ones(smoothing_window) / smoothing_window
    smooth = np.convolve(counts, kernel, mode="same")
    # ties on the smoothed curve go to the larger raw count, then to the nearer bin
    top = np.flatnonzero(smooth == smooth.max())
    peak = int(top[np.argmax(counts[top])])
    valid = (peak + 0.5) * bin_width
    below = int(np.searchsorted(d, valid, side="right"))
    need = max(2 * below, 1)
    if need > n:
        raise RadiusUnreachableError(
            f"{category}: CDF at the valid radius {valid} m is {below / n:.3f}; doubling exceeds 1"
        )
    radius = float(d[need - 1])
    if radius > max_distance:
        raise RadiusUnreachableError(f"{category}: doubled CDF reached only at {radius:.1f} m > {max_distance} m")
    return PoiCategoryParams(category, float(valid), radius)


def empirical_cdf(sorted_values, r):
    return np.searchsorted(sorted_values, r, side="right") / len(sorted_values)


# ------------------------------------------------------------------ report


@dataclass
class CalibrationReport:
    """Everything detected in one calibration run; written as key = value text."""

    speed_threshold: float = 1.1
    speed_fallback: bool = True
    n_speed_samples: int = 0
    speed_error: str = ""
    t_min: float = 1440.0
    t_max: float = 46800.0
    t_min_fallback: bool = True
    t_max_fallback: bool = True
    n_dwell_samples: int = 0
    dwell_error: str = ""
    fit: Optional[BrokenPowerLawFit] = None
    poi: dict = field(default_factory=dict)  # category -> (params, fallback, n, error)

    @property
    def errors(self) -> list[str]:
        out = [e for e in (self.speed_error, self.dwell_error) if e]
        out += [f"{c}: {v[3]}" for c, v in self.poi.items() if v[3]]
        return out

    def category_params(self) -> dict[str, PoiCategoryParams]:
        return {c: v[0] for c, v in self.poi.items()}

    def write(self, path):
        cp = configparser.ConfigParser(interpolation=None)
        cp["speed"] = {
            "threshold": repr(self.speed_threshold),
            "fallback": str(self.speed_fallback).lower(),
            "n_samples": str(self.n_speed_samples),
            "error": self.speed_error,
        }
        dwell = {
            "t_min": repr(self.t_min),
            "t_max": repr(self.t_max),
            "t_min_fallback": str(self.t_min_fallback).lower(),
            "t_max_fallback": str(self.t_max_fallback).lower(),
            "n_samples": str(self.n_dwell_samples),
            "error": self.dwell_error,
        }
        if self.fit is not None:
            dwell.update(
                alpha1=repr(self.fit.alpha1),
                alpha2=repr(self.fit.alpha2),
                break_point=repr(self.fit.break_point),
                fit_error=repr(self.fit.fit_error),
            )
        cp["dwell"] = dwell
        for cat, (params, fallback, n, err) in self.poi.items():
            cp[f"poi:{cat}"] = {
                "valid_radius": repr(params.valid_radius),
                "poi_radius": repr(params.poi_radius),
                "fallback": str(fallback).lower(),
                "n_samples": str(n),
                "error": err,
            }
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def read(cls, path) -> "CalibrationReport":
        cp = configparser.ConfigParser(interpolation=None)
        if not cp.read(path):
            raise FileNotFoundError(path)
        s, d = cp["speed"], cp["dwell"]
        fit = None
        if "alpha1" in d:
            fit = BrokenPowerLawFit(
                d.getfloat("alpha1"), d.getfloat("alpha2"), d.getfloat("break_point"), d.getfloat("fit_error")
            )
        poi = {}
        for name in cp.sections():
            if name.startswith("poi:"):
                sec = cp[name]
                cat = name[4:]
                poi[cat] = (
                    PoiCategoryParams(cat, sec.getfloat("valid_radius"), sec.getfloat("poi_radius")),
                    sec.getboolean("fallback"),
                    sec.getint("n_samples"),
                    sec.get("error", ""),
                )
        return cls(
            speed_threshold=s.getfloat("threshold"),
            speed_fallback=s.getboolean("fallback"),
            n_speed_samples=s.getint("n_samples"),
            speed_error=s.get("error", ""),
            t_min=d.getfloat("t_min"),
            t_max=d.getfloat("t_max"),
            t_min_fallback=d.getboolean("t_min_fallback"),
            t_max_fallback=d.getboolean("t_max_fallback"),
            n_dwell_samples=d.getint("n_samples"),
            dwell_error=d.get("error", ""),
            fit=fit,
            poi=poi,
        )


def default_poi_entry(category: str, n: int, error: str):
    v, r = DEFAULT_POI_RADII[category]
    return PoiCategoryParams(category, v, r), True, n, error
