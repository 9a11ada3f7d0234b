"""Pipeline stages; each one reads its inputs from files and writes its outputs to files."""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import calibration as cal
from . import kernels, stats
from .config import RunConfig
from .errors import EmptyTableError, FitFailureError, InsufficientDataError, RadiusUnreachableError
from .ingest import read_cleaned, run_cascade, parse_records, write_cleaned, write_rejections
from .model import POI_CATEGORIES, StopClass, Thresholds, Trajectory
from .parallel import map_parts
from .spatial import CityIndex, PoiIndex, RoadIndex, read_cities, read_pois, read_roads
from .stops import detect_all, extract_stops, mark_motion_status, write_stops
from .trips import (
    assign_cities,
    chain_trips,
    mark_intercity,
    read_trip_ends,
    read_trips,
    select_trip_ends,
    write_trip_ends,
    write_trips,
)

log = logging.getLogger("tripends")

CLEANED = "cleaned.csv"
REJECTIONS = "rejections.csv"
STOPS = "stops.csv"
TRIP_ENDS = "trip_ends.csv"
TRIPS = "trips.csv"
EXTRACT_SUMMARY = "extract_summary.ini"
STATS_FILES = (
    "od_matrix.csv",
    "category_shares.csv",
    "departure_profile.csv",
    "arrival_profile.csv",
    "distance_histogram.csv",
    "duration_histogram.csv",
    "fits.txt",
)

_DETECTOR_ERRORS = (InsufficientDataError, FitFailureError, RadiusUnreachableError)


def _chunks(items: Sequence, n: int) -> list:
    n = max(1, min(n, len(items)))
    return [items[k::n] for k in range(n)]


# ------------------------------------------------------------------ ingest


def run_ingest(cfg: RunConfig):
    """Parse, clean and gap-split the GPS file; writes the cleaned-records and rejections files."""
    cfg.require("gps")
    os.makedirs(cfg.output_dir, exist_ok=True)
    header = {"auto": "auto", "yes": True, "no": False}[cfg.header]
    batch, malformed = parse_records(cfg.gps, cfg.delimiter, header, cfg.tz_offset_hours)
    result = run_cascade(batch, cfg.thresholds, cfg.region, malformed, cfg.workers)
    write_cleaned(result.trajectories, cfg.out(CLEANED), cfg.tz_offset_hours)
    write_rejections(result.rejections, cfg.out(REJECTIONS))
    log.info(
        "ingest: %d rows, %d accepted in %d segments, %d rejected",
        result.n_input,
        result.n_accepted,
        len(result.trajectories),
        len(result.rejections),
    )
    return result


# ------------------------------------------------------------------ calibrate


def _speed_part(args):
    part, bin_width = args
    h = cal.Histogram(bin_width, 0.0, np.zeros(0, dtype=np.int64))
    for tr in part:
        if len(tr) > 1:
            h = h.merge(cal.build_histogram(kernels.pair_speeds(tr.lon, tr.lat, tr.ts), bin_width))
    return h


def _raw_stops(args):
    part, speed_threshold = args
    out = []
    for tr in part:
        out += extract_stops(tr, mark_motion_status(tr, speed_threshold))
    return out


def speed_histogram(trajectories: Sequence[Trajectory], bin_width: float, workers=1):
    """Pairwise speeds of all segments in one histogram (merged per worker part); also returns the parts."""
    parts = _chunks(list(trajectories), workers)
    hists = map_parts(_speed_part, [(p, bin_width) for p in parts], workers)
    hist = cal.Histogram(bin_width, 0.0, np.zeros(0, dtype=np.int64))
    for h in hists:
        hist = hist.merge(h)
    return hist, parts


def poi_distance_samples(stops, pois, max_distance: float) -> dict:
    """Per category, distances from each stop to its nearest POI, kept when below ``max_distance``."""
    index = PoiIndex(pois)
    lons = np.array([s.centroid_lon for s in stops])
    lats = np.array([s.centroid_lat for s in stops])
    out = {}
    for cat in index.categories:
        if len(stops) == 0:
            out[cat] = np.empty(0)
            continue
        _, d = index.nearest_many(lons, lats, cat)
        out[cat] = d[d < max_distance]
    return out


def calibrate(trajectories: Sequence[Trajectory], pois, cfg: RunConfig) -> cal.CalibrationReport:
    """Run the three detectors in sequence; each falls back to its default on failure when allowed."""
    st = cfg.calibration_settings
    th = cfg.thresholds
    report = cal.CalibrationReport()

    def failed(what, exc):
        if not st.allow_fallback:
            raise InsufficientDataError(f"{what}: {exc}") from exc
        log.warning("calibrate: %s falls back to its default: %s", what, exc)
        return str(exc)

    hist, parts = speed_histogram(trajectories, st.speed_bin_width, cfg.workers)
    report.n_speed_samples = hist.total
    try:
        det = cal.detect_speed_threshold(hist, st.speed_window, st.smoothness_ratio, th.speed_threshold)
        report.speed_threshold, report.speed_fallback = det.value, det.fallback
    except _DETECTOR_ERRORS as exc:
        report.speed_threshold, report.speed_fallback = th.speed_threshold, True
        report.speed_error = failed("speed threshold", exc)

    stop_parts = map_parts(_raw_stops, [(p, report.speed_threshold) for p in parts], cfg.workers)
    raw_stops = [s for part in stop_parts for s in part]
    dwell = np.array([s.dwell for s in raw_stops])
    dwell = dwell[dwell > 0]
    report.n_dwell_samples = len(dwell)
    try:
        tt = cal.detect_time_thresholds(
            dwell,
            st.bins_per_decade,
            st.dwell_window,
            st.irregularity_ratio,
            th.t_min,
            th.t_max,
            min_count=st.min_count,
            min_segment_bins=st.min_segment_bins,
            # dwells are differences of whole-second (often fixed-cadence) timestamps
            resolution=cal.lattice_step(dwell),
        )
        report.t_min, report.t_max = tt.t_min, tt.t_max
        report.t_min_fallback, report.t_max_fallback = tt.t_min_fallback, tt.t_max_fallback
        report.fit = tt.fit
    except _DETECTOR_ERRORS as exc:
        report.t_min, report.t_max = th.t_min, th.t_max
        report.t_min_fallback = report.t_max_fallback = True
        report.dwell_error = failed("dwell thresholds", exc)

    candidates = [s for s in raw_stops if s.dwell >= report.t_min]
    samples = poi_distance_samples(candidates, pois, st.poi_max_distance) if pois else {}
    for cat in POI_CATEGORIES:
        d = samples.get(cat, np.empty(0))
        try:
            if not pois:
                raise InsufficientDataError("no POI file configured")
            params = cal.detect_poi_radii(d, cat, st.poi_bin_width, st.poi_max_distance, st.poi_smoothing_window)
            report.poi[cat] = (params, False, len(d), "")
        except _DETECTOR_ERRORS as exc:
            report.poi[cat] = cal.default_poi_entry(cat, len(d), failed(f"POI radii for {cat}", exc))
    return report


def run_calibrate(cfg: RunConfig) -> cal.CalibrationReport:
    cleaned = cfg.out(CLEANED)
    cfg.require(cleaned)
    pois = []
    if cfg.pois:
        cfg.require("pois")
        pois = read_pois(cfg.pois)
    trajectories = read_cleaned(cleaned, cfg.tz_offset_hours)
    report = calibrate(trajectories, pois, cfg)
    os.makedirs(os.path.dirname(os.path.abspath(cfg.calibration_path)), exist_ok=True)
    report.write(cfg.calibration_path)
    log.info(
        "calibrate: speed %.3g km/h%s, t_min %.0f s%s, t_max %.0f s%s",
        report.speed_threshold,
        " (fallback)" if report.speed_fallback else "",
        report.t_min,
        " (fallback)" if report.t_min_fallback else "",
        report.t_max,
        " (fallback)" if report.t_max_fallback else "",
    )
    return report


# ------------------------------------------------------------------ extract


def resolve_parameters(cfg: RunConfig):
    """Thresholds and POI radii for extraction: defaults, then the calibration report, then explicit config."""
    thresholds = cfg.thresholds
    detected = None
    source = "defaults"
    if cfg.use_calibration and os.path.exists(cfg.calibration_path):
        report = cal.CalibrationReport.read(cfg.calibration_path)
        found = {"speed_threshold": report.speed_threshold, "t_min": report.t_min, "t_max": report.t_max}
        found = {k: v for k, v in found.items() if k not in cfg.explicit_thresholds}
        thresholds = dataclasses.replace(thresholds, **found)
        detected = report.category_params()
        source = cfg.calibration_path
    return thresholds, cfg.category_params(detected), source


@dataclass
class Extraction:
    stops: list
    trip_ends: list
    trips: list
    rejected: dict
    thresholds: Thresholds


def _detect_part(args):
    part, thresholds = args
    return detect_all(part, thresholds)


def extract(trajectories, thresholds: Thresholds, params: dict, pois, roads, cities, workers=1) -> Extraction:
    """Stops, trip ends and trips from cleaned trajectories."""
    parts = _chunks(list(trajectories), workers)
    stops = [s for part in map_parts(_detect_part, [(p, thresholds) for p in parts], workers) for s in part]
    stops.sort(key=lambda s: (s.truck_id, s.segment_id, s.t_start))
    ends, rejected = select_trip_ends(stops, PoiIndex(pois, params), RoadIndex(roads))
    city_index = CityIndex(cities)
    ends = assign_cities(ends, city_index)
    by_key = {(t.truck_id, t.segment_id): t for t in trajectories}
    trips = mark_intercity(chain_trips(ends, by_key), city_index)
    return Extraction(stops, ends, trips, dict(rejected), thresholds)


def run_extract(cfg: RunConfig) -> Extraction:
    cleaned = cfg.out(CLEANED)
    cfg.require(cleaned)
    for name in ("pois", "roads", "cities"):
        if getattr(cfg, name):
            cfg.require(name)
    thresholds, params, source = resolve_parameters(cfg)
    pois = read_pois(cfg.pois) if cfg.pois else []
    roads = read_roads(cfg.roads) if cfg.roads else []
    cities = read_cities(cfg.cities) if cfg.cities else []
    trajectories = read_cleaned(cleaned, cfg.tz_offset_hours)
    result = extract(trajectories, thresholds, params, pois, roads, cities, cfg.workers)
    write_stops(result.stops, cfg.out(STOPS))
    write_trip_ends(result.trip_ends, cfg.out(TRIP_ENDS))
    write_trips(result.trips, cfg.out(TRIPS))

    cp = configparser.ConfigParser(interpolation=None)
    cp["parameters"] = {"source": source, **{k: repr(v) for k, v in dataclasses.asdict(thresholds).items()}}
    cp["radii"] = {c: f"{p.valid_radius!r}, {p.poi_radius!r}" for c, p in params.items()}
    classes = {c.value: sum(1 for s in result.stops if s.stop_class is c) for c in StopClass}
    cp["counts"] = {
        "stops": str(len(result.stops)),
        **{f"stops_{k.lower()}": str(v) for k, v in classes.items()},
        "trip_ends": str(len(result.trip_ends)),
        "trips": str(len(result.trips)),
        "intercity_trips": str(sum(1 for t in result.trips if t.intercity)),
    }
    cp["rejected"] = {k: str(v) for k, v in sorted(result.rejected.items())}
    with open(cfg.out(EXTRACT_SUMMARY), "w") as fh:
        cp.write(fh)
    log.info(
        "extract: %d stops, %d trip ends, %d trips (parameters from %s)",
        len(result.stops),
        len(result.trip_ends),
        len(result.trips),
        source,
    )
    return result


# ------------------------------------------------------------------ stats


def _scope_shares(ends):
    try:
        return stats.category_shares(ends)
    except EmptyTableError:
        return None


def run_stats(cfg: RunConfig) -> dict:
    ends_path, trips_path = cfg.out(TRIP_ENDS), cfg.out(TRIPS)
    cfg.require(ends_path, trips_path)
    ends = read_trip_ends(ends_path)
    trips = read_trips(trips_path, ends)
    if cfg.cities:
        cfg.require("cities")
        city_ids = sorted(c.city_id for c in read_cities(cfg.cities))
    else:
        city_ids = sorted({c for t in trips for c in (t.origin_city, t.destination_city) if c})

    od = stats.build_od_matrix(trips, city_ids)
    stats.write_od_matrix(od, cfg.out("od_matrix.csv"))
    shares = {"all": _scope_shares(ends), "intercity": _scope_shares(stats.intercity_ends(trips))}
    for scope, table in shares.items():
        if table is None:
            log.warning("stats: no categorized trip ends in scope %r", scope)
    stats.write_category_shares(shares, cfg.out("category_shares.csv"))
    dep, arr = stats.time_of_day_profiles(trips, cfg.tz_offset_hours)
    stats.write_profile(dep, cfg.out("departure_profile.csv"))
    stats.write_profile(arr, cfg.out("arrival_profile.csv"))

    if trips:
        dd = stats.distance_duration_stats(trips, cfg.stats_bins_per_decade, strict=False)
    else:
        empty = stats.log_histogram([])
        dd = stats.DistanceDurationStats(empty, empty, None, None, {"distance": "no trips", "duration": "no trips"})
    stats.write_log_histogram(dd.distance_hist, cfg.out("distance_histogram.csv"))
    stats.write_log_histogram(dd.duration_hist, cfg.out("duration_histogram.csv"))
    stats.write_fits(dd, cfg.out("fits.txt"))
    for name, err in dd.errors.items():
        log.warning("stats: %s fit unavailable: %s", name, err)
    if dd.distance_fit is not None and dd.duration_fit is not None:
        log.info(
            "stats: %d trips, distance mode %.1f km, duration mode %.2f h",
            len(trips),
            dd.distance_fit.mode / 1000,
            dd.duration_fit.mode / 3600,
        )
    return {"od": od, "shares": shares, "departure": dep, "arrival": arr, "distance_duration": dd}
