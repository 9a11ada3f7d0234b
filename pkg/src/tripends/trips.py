"""Trip-end selection, trip chaining and intercity marking."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from itertools import groupby
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geo import haversine
from .model import StopClass, Trajectory, TruckStop
from .spatial import CityIndex, PoiIndex, RoadIndex
from .stops import STOP_COLUMNS, stop_from_row, stop_row

LONG_TERM = "LongTerm"
MEDIUM_IN_POI = "MediumInPoi"

# rejection reasons counted by select_trip_ends
REJECT_SHORT = "Short"
REJECT_OUTSIDE_POI = "MediumOutsidePoi"
REJECT_ON_ROAD = "MediumOnRoad"


@dataclass(frozen=True)
class TripEnd:
    stop: TruckStop
    validity_reason: str
    matched_poi_category: Optional[str] = None
    matched_poi_id: Optional[str] = None
    city_id: Optional[str] = None
    trip_end_id: str = ""

    def __post_init__(self):
        if self.validity_reason not in (LONG_TERM, MEDIUM_IN_POI):
            raise ValueError(f"unknown validity reason {self.validity_reason!r}")
        if self.validity_reason == MEDIUM_IN_POI and self.matched_poi_category is None:
            raise ValueError("a MediumInPoi trip end needs a matched POI category")

    @property
    def truck_id(self) -> str:
        return self.stop.truck_id

    @property
    def lon(self) -> float:
        return self.stop.centroid_lon

    @property
    def lat(self) -> float:
        return self.stop.centroid_lat


@dataclass(frozen=True)
class Trip:
    truck_id: str
    origin: TripEnd
    destination: TripEnd
    path_distance: float
    intercity: Optional[bool] = None  # None: a city is unresolved at either end
    origin_city: Optional[str] = None
    destination_city: Optional[str] = None

    def __post_init__(self):
        if not self.departure_ts < self.arrival_ts:
            raise ValueError("a trip must depart before it arrives")

    @property
    def departure_ts(self) -> float:
        return self.origin.stop.t_end

    @property
    def arrival_ts(self) -> float:
        return self.destination.stop.t_start

    @property
    def duration(self) -> float:
        return self.arrival_ts - self.departure_ts

    @property
    def trip_id(self) -> str:
        return f"{self.origin.trip_end_id}>{self.destination.trip_end_id}"


def select_trip_ends(
    stops: Sequence[TruckStop], poi_index: PoiIndex, road_index: RoadIndex
) -> tuple[list[TripEnd], Counter]:
    """Keep Long stops and Medium stops inside a POI boundary but off the road.

    Long stops are accepted unconditionally; they still carry the POI category
    whose boundary contains them, if any. Returns the accepted ends (ids
    numbered per truck in input order) and rejection counts per reason.
    """
    rejected: Counter = Counter()
    if any(s.stop_class is None for s in stops):
        raise ValueError("stops must be classified before trip-end selection")
    cand = [i for i, s in enumerate(stops) if s.stop_class is not StopClass.SHORT]
    rejected[REJECT_SHORT] = len(stops) - len(cand)
    matches = poi_index.match_many(
        [stops[i].centroid_lon for i in cand], [stops[i].centroid_lat for i in cand]
    ) if cand else []
    out = []
    seq: Counter = Counter()
    for i, m in zip(cand, matches):
        s = stops[i]
        if s.stop_class is StopClass.LONG:
            reason = LONG_TERM
        elif m is None:
            rejected[REJECT_OUTSIDE_POI] += 1
            continue
        elif road_index.is_on_road(s.centroid_lon, s.centroid_lat)[0]:
            rejected[REJECT_ON_ROAD] += 1
            continue
        else:
            reason = MEDIUM_IN_POI
        k = seq[s.truck_id]
        seq[s.truck_id] += 1
        out.append(
            TripEnd(
                s,
                reason,
                None if m is None else m.category,
                None if m is None else m.poi_id,
                trip_end_id=f"{s.truck_id}#{k}",
            )
        )
    return out, rejected


def assign_cities(ends: Sequence[TripEnd], city_index: CityIndex) -> list[TripEnd]:
    cities = city_index.locate_many([e.lon for e in ends], [e.lat for e in ends]) if ends else []
    return [replace(e, city_id=c) for e, c in zip(ends, cities)]


def _path_distance(cum, ts, t0, t1) -> float:
    # cumulative distance from the fix at t0 to the fix at t1
    i = int(np.searchsorted(ts, t0, side="left"))
    j = int(np.searchsorted(ts, t1, side="right")) - 1
    if j <= i:
        return 0.0
    return float(cum[j] - cum[i])


def cumulative_distance(traj: Trajectory) -> np.ndarray:
    d = haversine(traj.lon[:-1], traj.lat[:-1], traj.lon[1:], traj.lat[1:])
    return np.concatenate([[0.0], np.cumsum(d)])


def chain_trips(ends: Sequence[TripEnd], trajectories: Mapping[tuple, Trajectory]) -> list[Trip]:
    """One trip per consecutive pair of trip ends of the same truck and segment.

    ``trajectories`` maps ``(truck_id, segment_id)`` to the cleaned segment;
    path distance sums the fix-to-fix distances from the origin's last fix to
    the destination's first fix.
    """
    out = []
    cache: dict = {}
    ordered = sorted(ends, key=lambda e: (e.truck_id, e.stop.t_start))
    for (truck, seg), group in groupby(ordered, key=lambda e: (e.truck_id, e.stop.segment_id)):
        group = list(group)
        if len(group) < 2:
            continue
        key = (truck, seg)
        traj = trajectories.get(key)
        if traj is not None and key not in cache:
            cache[key] = cumulative_distance(traj)
        for a, b in zip(group, group[1:]):
            if not a.stop.t_end < b.stop.t_start:
                continue
            dist = _path_distance(cache[key], traj.ts, a.stop.t_end, b.stop.t_start) if traj is not None else float("nan")
            out.append(Trip(truck, a, b, dist))
    out.sort(key=lambda t: (t.truck_id, t.departure_ts))
    return out


def mark_intercity(trips: Sequence[Trip], city_index: CityIndex) -> list[Trip]:
    """Intercity iff both ends resolve to cities and the cities differ; unresolved ends give ``None``."""
    if not trips:
        return []
    lons = [t.origin.lon for t in trips] + [t.destination.lon for t in trips]
    lats = [t.origin.lat for t in trips] + [t.destination.lat for t in trips]
    cities = city_index.locate_many(lons, lats)
    n = len(trips)
    out = []
    for k, t in enumerate(trips):
        a, b = cities[k], cities[n + k]
        flag = None if a is None or b is None else a != b
        out.append(replace(t, intercity=flag, origin_city=a, destination_city=b))
    return out


# ------------------------------------------------------------------ files

TRIP_END_COLUMNS = ("trip_end_id",) + STOP_COLUMNS + (
    "validity_reason",
    "matched_poi_category",
    "matched_poi_id",
    "city_id",
)
TRIP_COLUMNS = (
    "trip_id",
    "truck_id",
    "origin_id",
    "destination_id",
    "departure_ts",
    "arrival_ts",
    "duration",
    "path_distance",
    "origin_city",
    "destination_city",
    "intercity",
)

_FLAG = {True: "yes", False: "no", None: "unresolved"}
_UNFLAG = {v: k for k, v in _FLAG.items()}


def write_trip_ends(ends: Iterable[TripEnd], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_END_COLUMNS)
        for e in ends:
            w.writerow(
                (e.trip_end_id,)
                + stop_row(e.stop)
                + (e.validity_reason, e.matched_poi_category or "", e.matched_poi_id or "", e.city_id or "")
            )


def read_trip_ends(path) -> list[TripEnd]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(
                TripEnd(
                    stop_from_row(r),
                    r["validity_reason"],
                    r["matched_poi_category"] or None,
                    r["matched_poi_id"] or None,
                    r["city_id"] or None,
                    r["trip_end_id"],
                )
            )
    return out


def write_trips(trips: Iterable[Trip], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_COLUMNS)
        for t in trips:
            w.writerow(
                (
                    t.trip_id,
                    t.truck_id,
                    t.origin.trip_end_id,
                    t.destination.trip_end_id,
                    repr(t.departure_ts),
                    repr(t.arrival_ts),
                    repr(t.duration),
                    repr(t.path_distance),
                    t.origin_city or "",
                    t.destination_city or "",
                    _FLAG[t.intercity],
                )
            )


def read_trips(path, ends: Sequence[TripEnd]) -> list[Trip]:
    """Trips file joined back to its trip ends by id."""
    by_id = {e.trip_end_id: e for e in ends}
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(
                Trip(
                    r["truck_id"],
                    by_id[r["origin_id"]],
                    by_id[r["destination_id"]],
                    float(r["path_distance"]),
                    _UNFLAG[r["intercity"]],
                    r["origin_city"] or None,
                    r["destination_city"] or None,
                )
            )
    return out
