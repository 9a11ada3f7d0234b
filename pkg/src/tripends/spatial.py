"""Geographic lookups: nearest POI, nearest road centerline, containing city.

Each indexed query has an exhaustive-scan twin (``*_scan``) used as the
test oracle. Indexes are immutable after construction.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import shapely
import shapely.wkt
from scipy.spatial import cKDTree

from .errors import AmbiguousCityError, ConfigurationError
from .geo import chord_to_meters, great_circle_distance, haversine, unit_vectors
from .model import (
    DEFAULT_POI_RADII,
    CityRegion,
    Poi,
    RoadClass,
    RoadSegment,
    default_category_params,
)

log = logging.getLogger(__name__)

MAX_EDGE_M = 1000.0
BOUNDARY_EPS_DEG = 1e-12


# ------------------------------------------------------------------ POIs


@dataclass(frozen=True)
class PoiMatch:
    category: str
    poi_id: str
    distance: float
    poi_radius: float

    @property
    def ratio(self) -> float:
        return self.distance / self.poi_radius


class PoiIndex:
    """Per-category nearest-neighbour search over POI centers.

    Search runs on unit-sphere vectors, where chord length orders points the
    same way as great-circle distance; the few closest candidates are then
    re-ranked by haversine distance with ties going to the lowest ``poi_id``.
    """

    _K = 4

    def __init__(self, pois: Iterable[Poi], params: Optional[dict] = None):
        self.params = dict(default_category_params() if params is None else params)
        by_cat: dict[str, list[Poi]] = {c: [] for c in self.params}
        for p in pois:
            if p.category not in by_cat:
                raise ConfigurationError(f"POI {p.poi_id} has category {p.category!r} without radius parameters")
            by_cat[p.category].append(p)
        self._cats = {}
        for cat, items in by_cat.items():
            items.sort(key=lambda p: p.poi_id)
            ids = [p.poi_id for p in items]
            lon = np.array([p.center_lon for p in items], dtype=np.float64)
            lat = np.array([p.center_lat for p in items], dtype=np.float64)
            tree = cKDTree(unit_vectors(lon, lat)) if items else None
            self._cats[cat] = (ids, lon, lat, tree)

    def __len__(self) -> int:
        return sum(len(v[0]) for v in self._cats.values())

    @property
    def categories(self) -> list[str]:
        return list(self._cats)

    def _category(self, category):
        try:
            return self._cats[category]
        except KeyError:
            raise ConfigurationError(f"unknown POI category {category!r}") from None

    def nearest_many(self, lons, lats, category):
        """Index of the nearest POI (into the sorted id list, -1 if none) and distance in meters."""
        ids, plon, plat, tree = self._category(category)
        lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
        lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
        m = len(lons)
        if tree is None:
            return np.full(m, -1), np.full(m, np.inf)
        k = min(self._K, len(ids))
        _, cand = tree.query(unit_vectors(lons, lats), k=k)
        cand = cand.reshape(m, k)
        d = haversine(lons[:, None], lats[:, None], plon[cand], plat[cand])
        # lowest distance, then lowest id (candidate indices follow id order)
        order = np.lexsort((cand, d), axis=1)[:, 0]
        rows = np.arange(m)
        return cand[rows, order], d[rows, order]

    def nearest(self, lon, lat, category):
        """``(poi_id, distance_m)`` of the closest POI in ``category``, or None if it has no POIs."""
        idx, dist = self.nearest_many([lon], [lat], category)
        if idx[0] < 0:
            return None
        return self._cats[category][0][idx[0]], float(dist[0])

    def match(self, lon, lat) -> Optional[PoiMatch]:
        """Category whose POI boundary contains the point with the smallest distance/poi_radius ratio."""
        return self.match_many([lon], [lat])[0]

    def match_many(self, lons, lats) -> list:
        """``match`` for many points; ratio ties go to the earlier category in parameter order."""
        lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
        m = len(lons)
        best_ratio = np.full(m, np.inf)
        best: list = [None] * m
        for cat in self._cats:
            idx, dist = self.nearest_many(lons, lats, cat)
            radius = self.params[cat].poi_radius
            ratio = dist / radius
            better = np.flatnonzero((dist <= radius) & (ratio < best_ratio))
            ids = self._cats[cat][0]
            for i in better.tolist():
                best_ratio[i] = ratio[i]
                best[i] = PoiMatch(cat, ids[idx[i]], float(dist[i]), radius)
        return best

    def pois(self, category) -> list[tuple]:
        ids, lon, lat, _ = self._category(category)
        return list(zip(ids, lon.tolist(), lat.tolist()))


def nearest_poi_scan(pois: Sequence[Poi], point, category):
    """Exhaustive twin of ``PoiIndex.nearest``."""
    members = sorted((p for p in pois if p.category == category), key=lambda p: p.poi_id)
    if not members:
        return None
    lon, lat = point
    d = haversine(lon, lat, np.array([p.center_lon for p in members]), np.array([p.center_lat for p in members]))
    i = int(np.argmin(d))  # argmin returns the first minimum, i.e. the lowest id
    return members[i].poi_id, float(d[i])


# ------------------------------------------------------------------ roads


def densify(centerline, max_edge=MAX_EDGE_M):
    """Insert vertices so no edge exceeds ``max_edge`` meters (linear in lon/lat)."""
    pts = [centerline[0]]
    for (x1, y1), (x2, y2) in zip(centerline[:-1], centerline[1:]):
        n = max(1, math.ceil(great_circle_distance((x1, y1), (x2, y2)) / max_edge))
        # pieces are linear in lon/lat, so the longest one (at an end) can exceed the arc share
        while max(
            great_circle_distance((x1, y1), (x1 + (x2 - x1) / n, y1 + (y2 - y1) / n)),
            great_circle_distance((x2 - (x2 - x1) / n, y2 - (y2 - y1) / n), (x2, y2)),
        ) > max_edge:
            n += 1
        for i in range(1, n + 1):
            t = i / n
            pts.append((x2, y2) if i == n else (x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
    return pts


def edge_distance(px, py, ax, ay, bx, by):
    """Distance in meters from points to edges.

    The closest point of each edge is found in a local equirectangular plane
    around the query point, then measured with the haversine formula.
    """
    k = np.cos(np.radians(py))
    ux = (bx - ax) * k
    uy = by - ay
    wx = (px - ax) * k
    wy = py - ay
    l2 = ux * ux + uy * uy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(l2 > 0, (wx * ux + wy * uy) / l2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    qx = np.where(t == 1.0, bx, ax + t * (bx - ax))
    qy = np.where(t == 1.0, by, ay + t * (by - ay))
    return haversine(px, py, qx, qy)


class RoadIndex:
    """Nearest-centerline search over densified road edges.

    Edge midpoints live in one k-d tree per road class. A query takes the k
    nearest midpoints, measures those edges exactly, and widens k until no
    unseen edge could beat the best one (its midpoint is farther than the
    best distance plus the longest half-edge).
    """

    def __init__(self, roads: Iterable[RoadSegment], max_edge=MAX_EDGE_M):
        self.segments = sorted(roads, key=lambda r: r.segment_id)
        ax, ay, bx, by, seg, hw = [], [], [], [], [], []
        for i, road in enumerate(self.segments):
            pts = np.asarray(densify(road.centerline, max_edge))
            ax.append(pts[:-1, 0])
            ay.append(pts[:-1, 1])
            bx.append(pts[1:, 0])
            by.append(pts[1:, 1])
            seg.append(np.full(len(pts) - 1, i))
            hw.append(np.full(len(pts) - 1, road.half_width))
        cat = (lambda xs, dt=np.float64: np.concatenate(xs).astype(dt) if xs else np.empty(0, dt))
        self.ax, self.ay, self.bx, self.by = cat(ax), cat(ay), cat(bx), cat(by)
        self.edge_segment = cat(seg, np.int64)
        self.edge_half_width = cat(hw)
        class_codes = {rc: k for k, rc in enumerate(RoadClass)}
        classes = np.array([class_codes[r.road_class] for r in self.segments], dtype=np.int64)
        # integer class code per edge, in RoadClass declaration order
        self.edge_class = classes[self.edge_segment] if len(self.edge_segment) else np.empty(0, dtype=np.int64)

        mx = (self.ax + self.bx) / 2
        my = (self.ay + self.by) / 2
        half = haversine(self.ax, self.ay, self.bx, self.by) / 2
        self._trees = {}
        for rc in RoadClass:
            members = np.flatnonzero(self.edge_class == class_codes[rc])
            if len(members):
                tree = cKDTree(unit_vectors(mx[members], my[members]))
                self._trees[rc] = (members, tree, float(half[members].max()))
        self.max_half_width = float(self.edge_half_width.max()) if len(self.edge_half_width) else 0.0

    def __len__(self) -> int:
        return len(self.segments)

    def _margin(self, half_len):
        return half_len * 1.01 + 1.0

    def _nearest_in_class(self, lon, lat, rc):
        members, tree, half_len = self._trees[rc]
        n = len(members)
        q = unit_vectors([lon], [lat])[0]
        k = min(16, n)
        while True:
            chord, local = tree.query(q, k=k)
            chord = np.atleast_1d(chord)
            local = np.atleast_1d(local)
            e = members[local]
            d = edge_distance(lon, lat, self.ax[e], self.ay[e], self.bx[e], self.by[e])
            j = np.lexsort((self.edge_segment[e], d))[0]
            best_d, best_e = float(d[j]), int(e[j])
            if k == n or best_d <= chord_to_meters(chord[-1]) - self._margin(half_len):
                return best_e, best_d
            k = min(4 * k, n)

    def nearest_edge(self, lon, lat, classes=None):
        """``(edge index, distance_m)`` of the closest edge among ``classes``; None if there is none."""
        wanted = list(RoadClass) if classes is None else [RoadClass(c) for c in classes]
        best = None
        for rc in wanted:
            if rc not in self._trees:
                continue
            e, d = self._nearest_in_class(lon, lat, rc)
            if best is None or (d, self.edge_segment[e]) < (best[1], self.edge_segment[best[0]]):
                best = (e, d)
        return best

    def distance_to_nearest_road(self, lon, lat, classes=None):
        """``(segment_id, distance_m)`` of the closest centerline, or None with no roads loaded."""
        hit = self.nearest_edge(lon, lat, classes)
        if hit is None:
            return None
        return self.segments[self.edge_segment[hit[0]]].segment_id, hit[1]

    def is_on_road(self, lon, lat):
        """``(True, segment_id)`` if some centerline is closer than its half-width, else ``(False, None)``."""
        if not self._trees:
            return False, None
        q = unit_vectors([lon], [lat])[0]
        cand = []
        for members, tree, half_len in self._trees.values():
            radius = (self.max_half_width + self._margin(half_len)) / 6_371_000.0
            local = tree.query_ball_point(q, r=2 * math.sin(radius / 2))
            if local:
                cand.append(members[np.asarray(local)])
        if not cand:
            return False, None
        e = np.concatenate(cand)
        d = edge_distance(lon, lat, self.ax[e], self.ay[e], self.bx[e], self.by[e])
        hit = d < self.edge_half_width[e]
        if not hit.any():
            return False, None
        e, d = e[hit], d[hit]
        j = np.lexsort((self.edge_segment[e], d))[0]
        return True, self.segments[self.edge_segment[e[j]]].segment_id


def nearest_road_scan(roads: Sequence[RoadSegment], point, classes=None, max_edge=MAX_EDGE_M):
    """Exhaustive twin of ``RoadIndex.distance_to_nearest_road``."""
    wanted = None if classes is None else {RoadClass(c) for c in classes}
    best = None
    lon, lat = point
    for road in sorted(roads, key=lambda r: r.segment_id):
        if wanted is not None and road.road_class not in wanted:
            continue
        pts = np.asarray(densify(road.centerline, max_edge))
        d = float(edge_distance(lon, lat, pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1]).min())
        if best is None or d < best[1]:
            best = (road.segment_id, d)
    return best


def is_on_road_scan(roads: Sequence[RoadSegment], point, max_edge=MAX_EDGE_M):
    lon, lat = point
    for road in sorted(roads, key=lambda r: r.segment_id):
        pts = np.asarray(densify(road.centerline, max_edge))
        d = edge_distance(lon, lat, pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1]).min()
        if d < road.half_width:
            return True
    return False


# ------------------------------------------------------------------ cities


def ring_test(px, py, ring):
    """Even-odd crossing parity and on-boundary flag of points against one closed ring."""
    ring = np.asarray(ring, dtype=np.float64)
    x1, y1 = ring[:-1, 0], ring[:-1, 1]
    x2, y2 = ring[1:, 0], ring[1:, 1]
    X = px[:, None]
    Y = py[:, None]
    straddle = (y1 > Y) != (y2 > Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        x_cross = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
    odd = (np.count_nonzero(straddle & (X < x_cross), axis=1) % 2) == 1
    cross = (x2 - x1) * (Y - y1) - (y2 - y1) * (X - x1)
    length = np.hypot(x2 - x1, y2 - y1)
    eps = BOUNDARY_EPS_DEG
    on = (
        (np.abs(cross) <= eps * length)
        & (X >= np.minimum(x1, x2) - eps)
        & (X <= np.maximum(x1, x2) + eps)
        & (Y >= np.minimum(y1, y2) - eps)
        & (Y <= np.maximum(y1, y2) + eps)
    )
    return odd, on.any(axis=1)


def rings_test(px, py, rings, chunk=4096):
    """Interior (even-odd over all rings) and boundary flags for many points."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(len(px), dtype=bool)
    boundary = np.zeros(len(px), dtype=bool)
    for a in range(0, len(px), chunk):
        s = slice(a, a + chunk)
        for ring in rings:
            odd, on = ring_test(px[s], py[s], ring)
            inside[s] ^= odd
            boundary[s] |= on
    return inside & ~boundary, boundary


def points_in_rings(px, py, rings):
    """Closed containment: interior or boundary."""
    interior, boundary = rings_test(px, py, rings)
    return interior | boundary


def _resolve(city_ids, interior, boundary):
    """Pick the containing city; shared borders go to the lowest id, overlaps are errors."""
    if len(interior) > 1 or (interior and boundary):
        cands = sorted(set(interior) | set(boundary))
        raise AmbiguousCityError(f"point lies in overlapping cities {cands}", cands)
    if interior:
        return interior[0]
    if not boundary:
        return None
    if len(boundary) > 1:
        log.warning("point on the shared border of %s; assigned to %s", sorted(boundary), min(boundary))
    return min(boundary)


class CityIndex:
    """Point-in-polygon lookup over administrative regions (boundary counts as inside)."""

    def __init__(self, cities: Iterable[CityRegion]):
        self.cities = sorted(cities, key=lambda c: c.city_id)
        self.ids = [c.city_id for c in self.cities]
        self._rings = [[np.asarray(r) for r in c.polygons] for c in self.cities]
        boxes = []
        for rings in self._rings:
            allpts = np.vstack(rings)
            boxes.append(shapely.box(*allpts.min(axis=0), *allpts.max(axis=0)))
        self._tree = shapely.STRtree(boxes) if boxes else None

    def __len__(self) -> int:
        return len(self.cities)

    def locate_many(self, lons, lats) -> list:
        lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
        lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
        n = len(lons)
        if self._tree is None or n == 0:
            return [None] * n
        pt_idx, city_idx = self._tree.query(shapely.points(lons, lats), predicate="intersects")
        interior = [[] for _ in range(n)]
        boundary = [[] for _ in range(n)]
        for c in np.unique(city_idx):
            rows = pt_idx[city_idx == c]
            inn, on = rings_test(lons[rows], lats[rows], self._rings[c])
            for r in rows[inn]:
                interior[r].append(self.ids[c])
            for r in rows[on]:
                boundary[r].append(self.ids[c])
        return [_resolve(self.ids, interior[i], boundary[i]) for i in range(n)]

    def locate(self, lon, lat):
        """``city_id`` containing the point, or None."""
        return self.locate_many([lon], [lat])[0]


def locate_city_scan(cities: Sequence[CityRegion], point):
    """Exhaustive twin of ``CityIndex.locate``: ray-casting against every polygon."""
    lon, lat = point
    interior, boundary = [], []
    for city in sorted(cities, key=lambda c: c.city_id):
        inn, on = rings_test([lon], [lat], [np.asarray(r) for r in city.polygons])
        if inn[0]:
            interior.append(city.city_id)
        elif on[0]:
            boundary.append(city.city_id)
    return _resolve(None, interior, boundary)


# ------------------------------------------------------------------ file formats


def read_pois(path) -> list[Poi]:
    with open(path, newline="") as fh:
        return [
            Poi(r["poi_id"], r["category"], float(r["lon"]), float(r["lat"])) for r in csv.DictReader(fh)
        ]


def write_pois(pois: Sequence[Poi], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("poi_id", "category", "lon", "lat"))
        for p in pois:
            w.writerow((p.poi_id, p.category, repr(p.center_lon), repr(p.center_lat)))


def parse_vertices(text: str):
    """Vertex list from WKT (LINESTRING/POLYGON/MULTI*) or a bare ``lon lat, lon lat`` list."""
    text = text.strip()
    if text[:1].isalpha():
        geom = shapely.wkt.loads(text)
        if geom.geom_type == "LineString":
            return [list(geom.coords)]
        if geom.geom_type == "MultiLineString":
            return [list(g.coords) for g in geom.geoms]
        if geom.geom_type == "Polygon":
            return [list(geom.exterior.coords)] + [list(r.coords) for r in geom.interiors]
        if geom.geom_type == "MultiPolygon":
            out = []
            for g in geom.geoms:
                out += [list(g.exterior.coords)] + [list(r.coords) for r in g.interiors]
            return out
        raise ValueError(f"unsupported geometry {geom.geom_type}")
    return [[tuple(float(v) for v in pair.split()) for pair in text.split(",")]]


def read_roads(path) -> list[RoadSegment]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            parts = parse_vertices(r["geometry"])
            for k, line in enumerate(parts):
                sid = r["segment_id"] if len(parts) == 1 else f"{r['segment_id']}#{k}"
                out.append(RoadSegment(sid, RoadClass(r["road_class"]), [(x, y) for x, y, *_ in line]))
    return out


def write_roads(roads: Sequence[RoadSegment], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("segment_id", "road_class", "geometry"))
        for r in roads:
            coords = ", ".join(f"{x!r} {y!r}" for x, y in r.centerline)
            w.writerow((r.segment_id, r.road_class.value, f"LINESTRING ({coords})"))


def read_cities(path) -> list[CityRegion]:
    with open(path, newline="") as fh:
        return [
            CityRegion(r["city_id"], [[(x, y) for x, y, *_ in ring] for ring in parse_vertices(r["geometry"])])
            for r in csv.DictReader(fh)
        ]


def write_cities(cities: Sequence[CityRegion], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("city_id", "geometry"))
        for c in cities:
            rings = ", ".join("(" + ", ".join(f"{x!r} {y!r}" for x, y in ring) + ")" for ring in c.polygons)
            w.writerow((c.city_id, f"POLYGON ({rings})"))


__all__ = [
    "PoiIndex",
    "RoadIndex",
    "CityIndex",
    "nearest_poi_scan",
    "nearest_road_scan",
    "locate_city_scan",
    "DEFAULT_POI_RADII",
]
