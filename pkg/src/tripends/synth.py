"""Synthetic labeled truck fleets on a grid world, and scoring of predicted trip ends against them.

The world is a rectangle of square cities crossed by a regular grid of
straight roads, with POIs scattered per category. Each truck alternates
Manhattan-routed travel with stops whose dwell follows a broken power law;
every stop is recorded in the ground truth with its label. Fix times sit on
an exact sampling cadence and arrivals are aligned to it, so on a noiseless
plan stop detection reproduces the planned intervals exactly.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.signal import lfilter
from scipy.spatial import cKDTree

from .errors import PlanError
from .geo import KMH_PER_MS, chord_to_meters, haversine, unit_vectors
from .ingest import RecordBatch, write_gps
from .model import (
    DEFAULT_POI_RADII,
    EARTH_RADIUS_M,
    REFERENCE_CATEGORY_SHARES,
    CityRegion,
    Poi,
    RoadClass,
    RoadSegment,
)
from .parallel import map_parts
from .spatial import write_cities, write_pois, write_roads

TRIP_END = "TripEnd"
REST_STOP = "RestStop"
CONGESTION_STOP = "CongestionStop"
LABELS = (TRIP_END, REST_STOP, CONGESTION_STOP)

DAY = 86400.0
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


# ------------------------------------------------------------------ plan


@dataclass(frozen=True)
class NoiseModel:
    """Position jitter (AR(1) in time), dropped fixes, duplicated rows and teleport jumps."""

    jitter_std: float = 0.0  # m, stationary standard deviation per axis
    jitter_correlation: float = 1800.0  # s
    dropout: float = 0.0
    duplicate: float = 0.0
    jump_rate: float = 0.0
    jump_min: float = 5000.0  # m
    jump_max: float = 50000.0  # m

    @classmethod
    def standard(cls) -> "NoiseModel":
        return cls(jitter_std=10.0, dropout=0.01, duplicate=0.005, jump_rate=0.001)

    @property
    def is_zero(self) -> bool:
        return self.jitter_std == 0 and self.dropout == 0 and self.duplicate == 0 and self.jump_rate == 0


@dataclass(frozen=True)
class DwellLaw:
    """Density proportional to x^-alpha1 below the break and x^-alpha2 above, on [x_min, x_max].

    A further ``long_fraction`` of stops dwell uniformly on ``[long_min, long_max]``.
    """

    alpha1: float = 1.3
    alpha2: float = 0.6
    break_point: float = 1440.0
    x_min: float = 45.0  # half a 30 s cadence cell below the first lattice dwell (60 s)
    x_max: float = 46800.0
    long_fraction: float = 0.1
    long_min: float = 46800.0
    long_max: float = 72000.0

    @staticmethod
    def _mass(a, lo, hi):
        if a == 1:
            return math.log(hi / lo)
        return (hi ** (1 - a) - lo ** (1 - a)) / (1 - a)

    @staticmethod
    def _inv(a, lo, v):
        # inverse of the unnormalized mass from lo
        if a == 1:
            return lo * np.exp(v)
        return (lo ** (1 - a) + v * (1 - a)) ** (1 / (1 - a))

    def _weights(self):
        w1 = self._mass(self.alpha1, self.x_min, self.break_point)
        w2 = self.break_point ** (self.alpha2 - self.alpha1) * self._mass(self.alpha2, self.break_point, self.x_max)
        return w1, w2

    def cdf(self, x):
        """CDF of the power-law part."""
        x = np.clip(np.asarray(x, dtype=np.float64), self.x_min, self.x_max)
        w1, w2 = self._weights()
        c = self.break_point ** (self.alpha2 - self.alpha1)
        low = np.array([self._mass(self.alpha1, self.x_min, v) for v in np.minimum(x, self.break_point).ravel()])
        high = np.array([c * self._mass(self.alpha2, self.break_point, v) for v in np.maximum(x, self.break_point).ravel()])
        return ((low + high) / (w1 + w2)).reshape(x.shape)

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        w1, w2 = self._weights()
        m = u * (w1 + w2)
        c = self.break_point ** (self.alpha2 - self.alpha1)
        low = self._inv(self.alpha1, self.x_min, np.minimum(m, w1))
        high = self._inv(self.alpha2, self.break_point, np.maximum(m - w1, 0.0) / c)
        return np.where(m <= w1, low, high)

    def sample(self, rng, n, lo=None, hi=None):
        """Power-law draws, optionally conditioned on ``[lo, hi)``."""
        a = 0.0 if lo is None else float(self.cdf(lo))
        b = 1.0 if hi is None else float(self.cdf(hi))
        return self.ppf(a + (b - a) * rng.random(n))


@dataclass(frozen=True)
class WorldLayout:
    lon0: float = 114.0
    lat0: float = 32.0
    city_rows: int = 6
    city_cols: int = 6
    city_size: float = 0.5  # degrees
    road_spacing: float = 0.1  # degrees
    pois_per_category: int = 60
    near_road_fraction: float = 0.3
    near_road_min: float = 120.0  # m
    near_road_max: float = 400.0  # m


ROAD_CLASS_CYCLE = (RoadClass.PRIMARY, RoadClass.SECONDARY, RoadClass.MOTORWAY, RoadClass.TERTIARY)


@dataclass(frozen=True)
class FleetPlan:
    seed: int = 0
    n_trucks: int = 10
    horizon: float = 7 * DAY
    sampling_interval: float = 30.0
    start_ts: float = 1526227200.0  # 2018-05-14 00:00 at UTC+8
    tz_offset_hours: float = 8.0
    world: WorldLayout = field(default_factory=WorldLayout)
    category_mix: Mapping[str, float] = field(default_factory=lambda: dict(REFERENCE_CATEGORY_SHARES))
    category_radii: Mapping[str, tuple] = field(default_factory=lambda: dict(DEFAULT_POI_RADII))
    dwell: DwellLaw = field(default_factory=DwellLaw)
    t_min: float = 1440.0
    t_max: float = 46800.0
    trip_end_fraction: float = 0.95  # share of Medium stop draws that end a trip
    access_congestion_fraction: float = 0.5  # Medium congestion stops placed at the destination access point
    distance_mode: float = 90000.0  # m
    distance_sigma: float = 0.5
    duration_mode: float = 10800.0  # s
    speed_sigma: float = 0.25
    min_speed: float = 5.0  # km/h
    max_speed: float = 110.0  # km/h
    departure_hours: tuple = ()
    departure_spread: float = 2700.0  # s
    road_clearance: float = 40.0  # m, off-road stops keep this far from every centerline
    poi_clearance: float = 1000.0  # m, rest stops keep this far from every POI
    poi_margin: float = 60.0  # m, trip ends stay this far inside the POI radius
    noise: NoiseModel = field(default_factory=NoiseModel)

    def validate(self):
        if self.n_trucks < 1:
            raise PlanError("n_trucks must be at least 1")
        if not (self.horizon > 0 and self.sampling_interval > 0):
            raise PlanError("horizon and sampling_interval must be positive")
        mix = {c: w for c, w in self.category_mix.items() if w > 0}
        if not mix:
            raise PlanError("category mix has no positive weight; trip ends need POIs")
        if self.world.pois_per_category < 1:
            raise PlanError("trip ends need at least one POI per category")
        for c in mix:
            if c not in self.category_radii:
                raise PlanError(f"category {c!r} has no radii")
            valid, radius = self.category_radii[c]
            if not 0 < valid < radius - self.poi_margin:
                raise PlanError(f"category {c!r}: radii {valid}, {radius} leave no room inside the POI margin")
        if not 0 < self.t_min < self.t_max:
            raise PlanError("need 0 < t_min < t_max")
        if not self.min_speed < self.max_speed < 120:
            raise PlanError("need min_speed < max_speed < 120 km/h")
        if not 0 < self.trip_end_fraction <= 1:
            raise PlanError("trip_end_fraction must be in (0, 1]")
        if self.world.road_spacing * M_PER_DEG * math.cos(math.radians(self.world.lat0 + self.world.city_rows * self.world.city_size)) < 4 * self.poi_clearance:
            raise PlanError("road spacing too tight for the clearances")
        return self


# ------------------------------------------------------------------ world


class GridWorld:
    """Axis-aligned road grid, square cities and POIs."""

    def __init__(self, plan: FleetPlan, rng):
        w = plan.world
        self.plan = plan
        self.lon0, self.lat0 = w.lon0, w.lat0
        self.lon1 = w.lon0 + w.city_cols * w.city_size
        self.lat1 = w.lat0 + w.city_rows * w.city_size
        nh = int(round((self.lat1 - self.lat0) / w.road_spacing))
        nv = int(round((self.lon1 - self.lon0) / w.road_spacing))
        self.h_lines = self.lat0 + w.road_spacing * np.arange(nh + 1)
        self.v_lines = self.lon0 + w.road_spacing * np.arange(nv + 1)
        self.roads = []
        for k, lat in enumerate(self.h_lines):
            pts = [(float(x), float(lat)) for x in np.linspace(self.lon0, self.lon1, nv + 1)]
            self.roads.append(RoadSegment(f"H{k:03d}", ROAD_CLASS_CYCLE[k % 4], pts))
        for k, lon in enumerate(self.v_lines):
            pts = [(float(lon), float(y)) for y in np.linspace(self.lat0, self.lat1, nh + 1)]
            self.roads.append(RoadSegment(f"V{k:03d}", ROAD_CLASS_CYCLE[(k + 1) % 4], pts))
        self.cities = []
        for r in range(w.city_rows):
            for c in range(w.city_cols):
                x0 = w.lon0 + c * w.city_size
                y0 = w.lat0 + r * w.city_size
                x1, y1 = x0 + w.city_size, y0 + w.city_size
                ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
                self.cities.append(CityRegion(f"C{r}{c}", [ring]))
        self.pois = self._place_pois(rng)
        self.poi_lon = np.array([p.center_lon for p in self.pois])
        self.poi_lat = np.array([p.center_lat for p in self.pois])
        self._poi_tree = cKDTree(unit_vectors(self.poi_lon, self.poi_lat))
        self.by_category = {}
        for i, p in enumerate(self.pois):
            self.by_category.setdefault(p.category, []).append(i)
        self.by_category = {c: np.array(v) for c, v in self.by_category.items()}

    def road_distance(self, lon, lat):
        """Meters to the nearest grid centerline (exact for straight parallels and meridians)."""
        lon = np.asarray(lon, dtype=np.float64)
        lat = np.asarray(lat, dtype=np.float64)
        h = self.h_lines[self._nearest(self.h_lines, lat)]
        v = self.v_lines[self._nearest(self.v_lines, lon)]
        dh = np.abs(lat - h) * M_PER_DEG
        dv = haversine(lon, lat, v, lat)
        return np.minimum(dh, dv)

    @staticmethod
    def _nearest(lines, x):
        i = np.clip(np.searchsorted(lines, x), 1, len(lines) - 1)
        return np.where(np.abs(x - lines[i - 1]) <= np.abs(lines[i] - x), i - 1, i)

    def poi_distance(self, lon, lat):
        chord, _ = self._poi_tree.query(unit_vectors(np.atleast_1d(lon), np.atleast_1d(lat)))
        return chord_to_meters(chord)

    def _place_pois(self, rng):
        plan = self.plan
        w = plan.world
        margin = 0.05
        out = []
        k = 0
        for cat in sorted(c for c, v in plan.category_mix.items() if v > 0):
            for _ in range(w.pois_per_category):
                if rng.random() < w.near_road_fraction:
                    # beside a random road at a planted offset
                    off = rng.uniform(w.near_road_min, w.near_road_max) * rng.choice([-1.0, 1.0])
                    if rng.random() < 0.5:
                        lat = self.h_lines[rng.integers(1, len(self.h_lines) - 1)] + off / M_PER_DEG
                        lon = rng.uniform(self.lon0 + margin, self.lon1 - margin)
                    else:
                        lat = rng.uniform(self.lat0 + margin, self.lat1 - margin)
                        lon = self.v_lines[rng.integers(1, len(self.v_lines) - 1)] + off / (
                            M_PER_DEG * math.cos(math.radians(lat))
                        )
                else:
                    lon = rng.uniform(self.lon0 + margin, self.lon1 - margin)
                    lat = rng.uniform(self.lat0 + margin, self.lat1 - margin)
                out.append(Poi(f"P{k:05d}", cat, float(lon), float(lat)))
                k += 1
        return out

    def route(self, a, b):
        """Manhattan route ``a -> horizontal road -> vertical road -> b``.

        Returns the vertex array and the indices of the first and last road vertices.
        """
        h = self.h_lines[self._nearest(self.h_lines, np.float64(a[1]))]
        v = self.v_lines[self._nearest(self.v_lines, np.float64(b[0]))]
        pts = [a, (a[0], float(h)), (float(v), float(h)), (float(v), b[1]), b]
        keep = [pts[0]]
        for p in pts[1:]:
            if p != keep[-1]:
                keep.append(p)
        arr = np.array(keep, dtype=np.float64)
        return arr

    def route_lengths(self, a, blon, blat):
        """Lengths of ``route(a, b)`` for many destinations."""
        h = self.h_lines[self._nearest(self.h_lines, np.float64(a[1]))]
        v = self.v_lines[self._nearest(self.v_lines, blon)]
        return (
            abs(a[1] - h) * M_PER_DEG
            + haversine(a[0], h, v, h)
            + np.abs(h - blat) * M_PER_DEG
            + haversine(v, blat, blon, blat)
        )


# ------------------------------------------------------------------ truth


@dataclass(frozen=True)
class Visit:
    truck_id: str
    lon: float
    lat: float
    t_start: float
    t_end: float
    label: str
    category: Optional[str] = None
    poi_id: Optional[str] = None

    @property
    def dwell(self) -> float:
        return self.t_end - self.t_start


@dataclass
class GroundTruth:
    visits: list

    def trip_ends(self) -> list[Visit]:
        return [v for v in self.visits if v.label == TRIP_END]

    def by_truck(self) -> dict:
        out: dict = {}
        for v in self.visits:
            out.setdefault(v.truck_id, []).append(v)
        return out

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("truck_id", "lon", "lat", "t_start", "t_end", "label", "category", "poi_id"))
            for v in self.visits:
                w.writerow(
                    (v.truck_id, repr(v.lon), repr(v.lat), repr(v.t_start), repr(v.t_end), v.label, v.category or "", v.poi_id or "")
                )

    @classmethod
    def read(cls, path) -> "GroundTruth":
        with open(path, newline="") as fh:
            return cls(
                [
                    Visit(
                        r["truck_id"],
                        float(r["lon"]),
                        float(r["lat"]),
                        float(r["t_start"]),
                        float(r["t_end"]),
                        r["label"],
                        r.get("category") or None,
                        r.get("poi_id") or None,
                    )
                    for r in csv.DictReader(fh)
                ]
            )


@dataclass
class Fleet:
    plan: FleetPlan
    batch: RecordBatch
    pois: list
    roads: list
    cities: list
    truth: GroundTruth


# ------------------------------------------------------------------ per-truck simulation


class _Track:
    """Accumulates fixes on the sampling cadence."""

    def __init__(self, t0, dt, end):
        self.t = t0
        self.dt = dt
        self.end = end
        self.lon, self.lat, self.ts = [], [], []
        self.done = False

    def stay(self, lon, lat, dwell, first=False):
        """Stationary fixes covering ``dwell``; returns the (t_start, t_end) of the stop or None if cut off."""
        t_start = self.t if first else self.t + self.dt
        t_end = t_start + dwell
        if t_end > self.end:
            self.done = True
            return None
        n = int(round(dwell / self.dt)) + 1
        ts = t_start + self.dt * np.arange(n)
        self.lon.append(np.full(n, lon))
        self.lat.append(np.full(n, lat))
        self.ts.append(ts)
        self.t = t_end
        return t_start, t_end

    def move(self, pts, speed_ms):
        """Constant-speed travel along ``pts`` (first vertex = current position)."""
        seg = haversine(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        length = cum[-1]
        k = max(1, int(math.ceil(length / speed_ms / self.dt - 1e-9)))
        m = np.arange(1, k + 1)
        ts = self.t + self.dt * m
        keep = ts <= self.end
        s = length * m[keep] / k
        self.lon.append(np.interp(s, cum, pts[:, 0]))
        self.lat.append(np.interp(s, cum, pts[:, 1]))
        self.ts.append(ts[keep])
        if not keep.all():
            self.done = True
        self.t = self.t + self.dt * k
        return length


def _subpath(pts, cum, s0, s1):
    inner = (cum > s0) & (cum < s1)
    a = np.array([np.interp(s0, cum, pts[:, 0]), np.interp(s0, cum, pts[:, 1])])
    b = np.array([np.interp(s1, cum, pts[:, 0]), np.interp(s1, cum, pts[:, 1])])
    return np.vstack([a, pts[inner], b])


class StopSchedule:
    """Stop types and dwells for one truck, all drawn from the plan's dwell law."""

    def __init__(self, plan: FleetPlan, rng):
        self.plan = plan
        self.rng = rng

    def round_dwell(self, x, lo=None, hi=None):
        dt = self.plan.sampling_interval
        d = max(dt, round(x / dt) * dt)
        if lo is not None and d < lo:
            d = math.ceil(lo / dt) * dt
        if hi is not None and d >= hi:
            d = (math.ceil(hi / dt) - 1) * dt
        return float(d)

    def trip_end_dwell(self, kind_long):
        p = self.plan
        if kind_long:
            return self.round_dwell(self.rng.uniform(p.dwell.long_min, p.dwell.long_max), lo=p.t_max)
        return self.round_dwell(p.dwell.sample(self.rng, 1, lo=p.t_min)[0], lo=p.t_min, hi=p.t_max)

    def draw_stop_events(self):
        """Intermediate stops then the trip end: every dwell comes from the planted law."""
        p = self.plan
        out = []
        while True:
            if self.rng.random() < p.dwell.long_fraction:
                out.append((TRIP_END, self.trip_end_dwell(True)))
                return out
            x = float(p.dwell.sample(self.rng, 1)[0])
            if x < p.t_min:
                out.append((CONGESTION_STOP, self.round_dwell(x, hi=p.t_min)))
            elif self.rng.random() < p.trip_end_fraction:
                out.append((TRIP_END, self.round_dwell(x, lo=p.t_min, hi=p.t_max)))
                return out
            else:
                kind = REST_STOP if self.rng.random() < 0.5 else CONGESTION_STOP
                out.append((kind, self.round_dwell(x, lo=p.t_min, hi=p.t_max)))



def sample_stop_dwells(plan: FleetPlan, n: int, rng) -> np.ndarray:
    """Dwells of ``n`` consecutive scheduled stops, without simulating any movement."""
    schedule = StopSchedule(plan, rng)
    out: list = []
    while len(out) < n:
        out += [d for _, d in schedule.draw_stop_events()]
    return np.array(out[:n])


class _TruckSim:
    def __init__(self, plan: FleetPlan, world: GridWorld, truck_id: str, rng):
        self.plan = plan
        self.world = world
        self.truck_id = truck_id
        self.rng = rng
        self.schedule = StopSchedule(plan, rng)
        cats = [c for c, w in plan.category_mix.items() if w > 0]
        weights = np.array([plan.category_mix[c] for c in cats], dtype=np.float64)
        self.cats = cats
        self.cat_p = weights / weights.sum()
        sd, sv = plan.distance_sigma, plan.speed_sigma
        self.mu_d = math.log(plan.distance_mode) + sd * sd
        # effective speed so that distance / speed has the planned duration mode
        self.mu_v = self.mu_d - (sd * sd + sv * sv) - math.log(plan.duration_mode)
        self.visits: list[Visit] = []
        dt = plan.sampling_interval
        self.track = _Track(plan.start_ts, dt, plan.start_ts + plan.horizon)

    def _departure_dwell(self, arrive):
        """Dwell ending near one of the planned local departure hours.

        Departures scatter around the middle of the planned hour, so hour ``h``
        peaks in the ``[h:00, h+1:00)`` bin of an hourly profile.
        """
        p = self.plan
        dt = p.sampling_interval
        earliest = arrive + p.t_min
        local = earliest + p.tz_offset_hours * 3600.0
        day0 = math.floor(local / DAY) * DAY
        hour = self.rng.choice(p.departure_hours)
        target = day0 + (hour + 0.5) * 3600.0 + self.rng.normal(0.0, p.departure_spread)
        while target < local:
            target += DAY
        d = target - p.tz_offset_hours * 3600.0 - arrive
        return float(math.ceil(d / dt) * dt)

    # -- places

    def _trip_end_spot(self, poi_index):
        p = self.plan
        w = self.world
        poi = w.pois[poi_index]
        valid, radius = p.category_radii[poi.category]
        for _ in range(100):
            r = self.rng.rayleigh(valid)
            if r > radius - p.poi_margin:
                continue
            th = self.rng.uniform(0, 2 * math.pi)
            lat = poi.center_lat + r * math.cos(th) / M_PER_DEG
            lon = poi.center_lon + r * math.sin(th) / (M_PER_DEG * math.cos(math.radians(poi.center_lat)))
            if w.road_distance(lon, lat) >= p.road_clearance:
                return float(lon), float(lat)
        return None

    def _pick_destination(self, here):
        w = self.world
        for _ in range(20):
            cat = self.cats[self.rng.choice(len(self.cats), p=self.cat_p)]
            cand = w.by_category[cat]
            want = math.exp(self.rng.normal(self.mu_d, self.plan.distance_sigma))
            est = w.route_lengths(here, w.poi_lon[cand], w.poi_lat[cand])
            est = np.where(est < 5000.0, np.inf, est)
            if not np.isfinite(est).any():
                continue
            i = int(cand[np.argmin(np.abs(est - want))])
            spot = self._trip_end_spot(i)
            if spot is not None:
                return i, spot
        raise PlanError("no reachable destination found; the world is too small or too crowded")

    def _rest_spot(self, pts, cum, s):
        """A point beside the route, clear of roads and POIs."""
        p = self.plan
        w = self.world
        x = np.interp(s, cum, pts[:, 0])
        y = np.interp(s, cum, pts[:, 1])
        j = min(int(np.searchsorted(cum, s, side="right")), len(pts) - 1)
        horizontal = pts[j, 1] == pts[j - 1, 1]
        for _ in range(10):
            off = self.rng.uniform(200.0, 600.0) * self.rng.choice([-1.0, 1.0])
            if horizontal:
                rx, ry = x, y + off / M_PER_DEG
            else:
                rx, ry = x + off / (M_PER_DEG * math.cos(math.radians(y))), y
            if w.road_distance(rx, ry) >= p.road_clearance and w.poi_distance(rx, ry)[0] > p.poi_clearance:
                return float(rx), float(ry)
        return None

    # -- main loop

    def run(self):
        p = self.plan
        w = self.world
        tr = self.track
        # start parked at a trip end
        cat = self.cats[self.rng.choice(len(self.cats), p=self.cat_p)]
        spot = None
        for _ in range(100):
            poi_i = int(self.rng.choice(w.by_category[cat]))
            spot = self._trip_end_spot(poi_i)
            if spot is not None:
                break
        if spot is None:
            raise PlanError(f"no room for trip ends around {cat!r} POIs")
        here = spot
        dwell = self.schedule.trip_end_dwell(self.rng.random() < p.dwell.long_fraction)
        if p.departure_hours:
            dwell = self._departure_dwell(tr.t)
        span = tr.stay(here[0], here[1], dwell, first=True)
        if span is None:
            return
        self._record(here, span, TRIP_END, w.pois[poi_i])
        while not tr.done:
            self._trip(here)
            here = self._here

    def _record(self, where, span, label, poi=None):
        self.visits.append(
            Visit(
                self.truck_id,
                float(where[0]),
                float(where[1]),
                float(span[0]),
                float(span[1]),
                label,
                None if poi is None else poi.category,
                None if poi is None else poi.poi_id,
            )
        )

    def _trip(self, here):
        p = self.plan
        w = self.world
        tr = self.track
        dt = p.sampling_interval
        events = self.schedule.draw_stop_events()
        poi_i, dest = self._pick_destination(here)
        pts = w.route(here, dest)
        seg = haversine(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        length = cum[-1]
        # the road part runs from the first to the last interior vertex
        road_lo, road_hi = cum[1], cum[-2]

        # place intermediate stops along the road part, at least 300 m apart
        stops = []  # (s, kind, dwell, rest_spot)
        used = []
        for kind, dwell in events[:-1]:
            if kind == CONGESTION_STOP and dwell >= p.t_min and self.rng.random() < p.access_congestion_fraction:
                s = road_hi
            else:
                if road_hi - road_lo < 1000.0:
                    continue
                s = float(self.rng.uniform(road_lo + 300.0, road_hi - 300.0))
            if any(abs(s - u) < 300.0 for u in used):
                continue
            spot = None
            if kind == REST_STOP:
                spot = self._rest_spot(pts, cum, s)
                if spot is None:
                    continue
            used.append(s)
            stops.append((s, kind, dwell, spot))
        stops.sort(key=lambda e: e[0])

        detour = sum(2 * haversine(np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1]), *spot) for s, _, _, spot in stops if spot)
        moving_len = length + float(detour)
        budget = length / math.exp(self.rng.normal(self.mu_v, p.speed_sigma))
        stop_time = sum(d + dt for _, _, d, _ in stops)
        moving_time = budget - stop_time
        speed = moving_len / moving_time if moving_time > 0 else p.max_speed / KMH_PER_MS
        speed = min(max(speed, p.min_speed / KMH_PER_MS), p.max_speed / KMH_PER_MS)

        s_prev = 0.0
        for s, kind, dwell, spot in stops:
            tr.move(_subpath(pts, cum, s_prev, s), speed)
            if tr.done:
                return
            at = (float(np.interp(s, cum, pts[:, 0])), float(np.interp(s, cum, pts[:, 1])))
            if spot is not None:
                tr.move(np.array([at, spot]), speed)
                if tr.done:
                    return
                span = tr.stay(spot[0], spot[1], dwell)
                if span is None:
                    return
                self._record(spot, span, kind)
                tr.move(np.array([spot, at]), speed)
                if tr.done:
                    return
            else:
                span = tr.stay(at[0], at[1], dwell)
                if span is None:
                    return
                self._record(at, span, kind)
            s_prev = s
        tr.move(_subpath(pts, cum, s_prev, length), speed)
        if tr.done:
            return
        kind, dwell = events[-1]
        if p.departure_hours:
            dwell = max(p.t_min, self._departure_dwell(tr.t + dt))
        span = tr.stay(dest[0], dest[1], dwell)
        if span is None:
            return
        self._record(dest, span, TRIP_END, w.pois[poi_i])
        self._here = dest


def _kinematics(lon, lat, ts):
    """Reported speed (km/h, incoming pair) and heading (degrees) per fix."""
    n = len(ts)
    speed = np.zeros(n)
    heading = np.zeros(n)
    if n < 2:
        return speed, heading
    d = haversine(lon[:-1], lat[:-1], lon[1:], lat[1:])
    speed[1:] = np.round(d / np.diff(ts) * KMH_PER_MS, 1)
    y = np.sin(np.radians(lon[1:] - lon[:-1])) * np.cos(np.radians(lat[1:]))
    x = np.cos(np.radians(lat[:-1])) * np.sin(np.radians(lat[1:])) - np.sin(np.radians(lat[:-1])) * np.cos(
        np.radians(lat[1:])
    ) * np.cos(np.radians(lon[1:] - lon[:-1]))
    brg = np.floor(np.degrees(np.arctan2(y, x)) % 360.0)
    moving = d > 0
    # stationary fixes keep the last heading; the first fix takes the first one
    idx = np.concatenate([[0], np.where(moving, np.arange(1, n), 0)])
    idx = np.maximum.accumulate(idx)
    full = np.concatenate([[0.0], brg])
    heading = full[idx]
    first = np.flatnonzero(moving)
    if len(first):
        heading[idx == 0] = brg[first[0]]
    return speed, heading % 360.0


def _apply_noise(noise: NoiseModel, lon, lat, ts, speed, heading, dt, rng):
    n = len(ts)
    if noise.jitter_std > 0 and n:
        rho = math.exp(-dt / noise.jitter_correlation)
        gain = noise.jitter_std * math.sqrt(1 - rho * rho)
        z = rng.standard_normal((2, n))
        x0 = rng.standard_normal(2) * noise.jitter_std
        east = lfilter([gain], [1.0, -rho], z[0], zi=[rho * x0[0]])[0]
        north = lfilter([gain], [1.0, -rho], z[1], zi=[rho * x0[1]])[0]
        lat = lat + north / M_PER_DEG
        lon = lon + east / (M_PER_DEG * np.cos(np.radians(lat)))
    if noise.jump_rate > 0 and n:
        hit = np.flatnonzero(rng.random(n) < noise.jump_rate)
        dist = rng.uniform(noise.jump_min, noise.jump_max, len(hit))
        th = rng.uniform(0, 2 * math.pi, len(hit))
        lat = lat.copy()
        lon = lon.copy()
        lat[hit] += dist * np.cos(th) / M_PER_DEG
        lon[hit] += dist * np.sin(th) / (M_PER_DEG * np.cos(np.radians(lat[hit])))
    keep = np.ones(n, dtype=bool)
    if noise.dropout > 0 and n:
        keep = rng.random(n) >= noise.dropout
    reps = np.ones(n, dtype=np.int64)
    if noise.duplicate > 0 and n:
        reps += rng.random(n) < noise.duplicate
    reps = np.where(keep, reps, 0)
    cols = [np.repeat(c, reps) for c in (lon, lat, ts, speed, heading)]
    return cols


def _simulate(args):
    plan, world, truck_id, seed_seq = args
    sched_ss, noise_ss = seed_seq.spawn(2)
    sim = _TruckSim(plan, world, truck_id, np.random.default_rng(sched_ss))
    sim._here = None
    sim.run()
    tr = sim.track
    if tr.lon:
        lon, lat, ts = (np.concatenate(c) for c in (tr.lon, tr.lat, tr.ts))
    else:
        lon = lat = ts = np.empty(0)
    speed, heading = _kinematics(lon, lat, ts)
    cols = _apply_noise(plan.noise, lon, lat, ts, speed, heading, plan.sampling_interval, np.random.default_rng(noise_ss))
    return cols, sim.visits


def generate_fleet(plan: FleetPlan, workers: int = 1) -> Fleet:
    """Simulate every truck of the plan; identical plans give identical fleets."""
    plan.validate()
    root = np.random.SeedSequence(plan.seed)
    world_ss, trucks_ss = root.spawn(2)
    world = GridWorld(plan, np.random.default_rng(world_ss))
    names = [f"truck{k:04d}" for k in range(plan.n_trucks)]
    parts = [(plan, world, name, ss) for name, ss in zip(names, trucks_ss.spawn(plan.n_trucks))]
    results = map_parts(_simulate, parts, workers)
    codes, cols, visits = [], [[] for _ in range(5)], []
    for k, (c, v) in enumerate(results):
        codes.append(np.full(len(c[0]), k, dtype=np.int32))
        for acc, col in zip(cols, c):
            acc.append(col)
        visits += v
    lon, lat, ts, speed, heading = (np.concatenate(c) if c else np.empty(0) for c in cols)
    batch = RecordBatch(np.concatenate(codes), names, lon, lat, ts, speed, heading)
    return Fleet(plan, batch, world.pois, world.roads, world.cities, GroundTruth(visits))


def write_fleet(fleet: Fleet, directory) -> dict:
    """Write gps.csv, pois.csv, roads.csv, cities.csv and truth.csv; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, f"{k}.csv") for k in ("gps", "pois", "roads", "cities", "truth")}
    write_gps(fleet.batch, paths["gps"], fleet.plan.tz_offset_hours)
    write_pois(fleet.pois, paths["pois"])
    write_roads(fleet.roads, paths["roads"])
    write_cities(fleet.cities, paths["cities"])
    fleet.truth.write(paths["truth"])
    return paths


# ------------------------------------------------------------------ plan files

_PLAN_SECTIONS = {"fleet": FleetPlan, "world": WorldLayout, "dwell": DwellLaw, "noise": NoiseModel}
_NESTED = {"world", "dwell", "noise", "category_mix", "category_radii"}


def _convert(section, key, kind, value):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "tuple":
            return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise PlanError(f"[{section}] {key} = {value!r} is not a valid {kind}") from None
    raise PlanError(f"[{section}] {key} cannot be set in a plan file")


def _section_values(cp, section, cls):
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, value in cp[section].items():
        if key == "preset" and cls is NoiseModel:
            continue
        if key not in kinds or (cls is FleetPlan and key in _NESTED):
            raise PlanError(f"unknown key [{section}] {key}")
        out[key] = _convert(section, key, kinds[key], value)
    return out


def read_plan(path, seed: Optional[int] = None) -> FleetPlan:
    """Fleet plan from a key = value file.

    Sections: ``[fleet]`` (scalar plan fields), ``[world]``, ``[dwell]``,
    ``[noise]`` (``preset = none | standard`` plus field overrides), ``[mix]``
    (category = weight, replaces the default mix) and ``[radii]``
    (category = valid_radius, poi_radius). ``seed`` overrides the file's seed.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        if not os.path.exists(path):
            raise PlanError(f"plan file {path} does not exist")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise PlanError(f"{path}: {exc}") from None
    unknown = set(cp.sections()) - set(_PLAN_SECTIONS) - {"mix", "radii"}
    if unknown:
        raise PlanError(f"unknown plan section(s): {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in _PLAN_SECTIONS.items():
        parts[name] = _section_values(cp, name, cls) if cp.has_section(name) else {}
    noise = NoiseModel()
    if cp.has_section("noise"):
        preset = cp["noise"].get("preset", "none").strip().lower()
        if preset not in ("none", "standard"):
            raise PlanError("[noise] preset must be none or standard")
        if preset == "standard":
            noise = NoiseModel.standard()
    fleet = parts["fleet"]
    if seed is not None:
        fleet["seed"] = int(seed)
    if "departure_hours" in fleet:
        fleet["departure_hours"] = tuple(int(h) for h in fleet["departure_hours"])
    if cp.has_section("mix"):
        fleet["category_mix"] = {c: _convert("mix", c, "float", v) for c, v in cp["mix"].items()}
    if cp.has_section("radii"):
        radii = dict(DEFAULT_POI_RADII)
        for c, v in cp["radii"].items():
            pair = _convert("radii", c, "tuple", v)
            if len(pair) != 2:
                raise PlanError(f"[radii] {c} must be 'valid_radius, poi_radius'")
            radii[c] = pair
        fleet["category_radii"] = radii
    try:
        plan = FleetPlan(
            world=WorldLayout(**parts["world"]),
            dwell=DwellLaw(**parts["dwell"]),
            noise=dataclasses.replace(noise, **parts["noise"]),
            **fleet,
        )
    except (TypeError, ValueError) as exc:
        raise PlanError(str(exc)) from None
    return plan.validate()


def write_run_config(paths: dict, plan: FleetPlan, path, output_dir="out"):
    """Run configuration pointing at a written fleet; paths are relative to the config's directory."""
    base = os.path.dirname(os.path.abspath(path))
    cp = configparser.ConfigParser(interpolation=None)
    cp["paths"] = {
        k: os.path.relpath(os.path.abspath(v), base) for k, v in paths.items() if k != "truth"
    }
    cp["paths"]["output_dir"] = output_dir
    cp["ingest"] = {"tz_offset_hours": repr(plan.tz_offset_hours)}
    with open(path, "w") as fh:
        cp.write(fh)


# ------------------------------------------------------------------ scoring


@dataclass
class Score:
    precision: Optional[float]  # None when there are no predictions
    recall: float
    matched: int
    n_predicted: int
    n_truth: int
    confusion: Counter

    @property
    def precision_undefined(self) -> bool:
        return self.precision is None


def _as_pred(p):
    stop = getattr(p, "stop", p)
    return stop.truck_id, stop.centroid_lon, stop.centroid_lat, stop.t_start, stop.t_end


def score_trip_ends(predicted, truth: GroundTruth, match_radius: float = 200.0, match_window: float = 1800.0) -> Score:
    """Greedy one-to-one matching of predicted trip ends to truth trip ends, in time order.

    A prediction matches the unmatched truth TripEnd of the same truck that is
    within ``match_radius`` meters and whose interval overlaps the
    prediction's interval widened by ``match_window`` seconds; among several,
    the one starting closest in time wins. Unmatched predictions are tallied in
    ``confusion`` under the label of the overlapping truth visit (``None`` if
    there is none); matches are tallied under ``TripEnd``.
    """
    if not (match_radius > 0 and match_window > 0):
        raise ValueError("match_radius and match_window must be positive")
    preds = sorted((_as_pred(p) for p in predicted), key=lambda r: (r[0], r[3]))
    visits = truth.by_truck()
    arrays = {}
    for truck, vs in visits.items():
        arrays[truck] = (
            np.array([v.lon for v in vs]),
            np.array([v.lat for v in vs]),
            np.array([v.t_start for v in vs]),
            np.array([v.t_end for v in vs]),
            np.array([v.label == TRIP_END for v in vs]),
            [v.label for v in vs],
        )
    used = {t: np.zeros(len(v), dtype=bool) for t, v in visits.items()}
    confusion: Counter = Counter()
    matched = 0
    for truck, lon, lat, t0, t1 in preds:
        if truck not in arrays:
            confusion[None] += 1
            continue
        vlon, vlat, vs, ve, is_end, labels = arrays[truck]
        near = haversine(lon, lat, vlon, vlat) <= match_radius
        overlap = (vs <= t1 + match_window) & (t0 - match_window <= ve)
        cand = np.flatnonzero(near & overlap & is_end & ~used[truck])
        if len(cand):
            j = cand[np.argmin(np.abs(vs[cand] - t0))]
            used[truck][j] = True
            matched += 1
            confusion[TRIP_END] += 1
            continue
        other = np.flatnonzero(near & overlap)
        if len(other):
            j = other[np.argmin(np.abs(vs[other] - t0))]
            label = labels[j]
            confusion[f"{label} (already matched)" if label == TRIP_END else label] += 1
        else:
            confusion[None] += 1
    n_truth = sum(int(a[4].sum()) for a in arrays.values())
    n_pred = len(preds)
    return Score(
        matched / n_pred if n_pred else None,
        matched / n_truth if n_truth else 0.0,
        matched,
        n_pred,
        n_truth,
        confusion,
    )
