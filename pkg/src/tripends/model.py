"""Shared value types: GPS records, trajectories, stops and reference geography."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

EARTH_RADIUS_M = 6_371_000.0


class StopClass(str, enum.Enum):
    SHORT = "Short"
    MEDIUM = "Medium"
    LONG = "Long"


class MotionStatus(enum.IntEnum):
    MOVING = 0
    STATIONARY = 1


class RoadClass(str, enum.Enum):
    MOTORWAY = "Motorway"
    PRIMARY = "Primary"
    SECONDARY = "Secondary"
    TERTIARY = "Tertiary"

    @property
    def half_width(self) -> float:
        """Half of the average carriageway width in meters."""
        return ROAD_HALF_WIDTH[self]


# five lanes of 3.5 m for primary/secondary, three for motorway/tertiary
ROAD_HALF_WIDTH = {
    RoadClass.MOTORWAY: 5.25,
    RoadClass.PRIMARY: 8.75,
    RoadClass.SECONDARY: 8.75,
    RoadClass.TERTIARY: 5.25,
}

POI_CATEGORIES = (
    "construction company",
    "machinery electronics",
    "chemical metallurgy",
    "commercial trade",
    "logistics warehouse",
    "mining company",
    "factory",
    "farming base",
    "industrial park",
    "residential area",
    "building materials market",
)

# (valid radius, POI radius) in meters per category
DEFAULT_POI_RADII = {
    "construction company": (370.0, 690.0),
    "machinery electronics": (345.0, 655.0),
    "chemical metallurgy": (290.0, 545.0),
    "commercial trade": (275.0, 516.0),
    "logistics warehouse": (260.0, 487.0),
    "mining company": (285.0, 521.0),
    "factory": (350.0, 670.0),
    "farming base": (310.0, 550.0),
    "industrial park": (450.0, 849.0),
    "residential area": (430.0, 814.0),
    "building materials market": (390.0, 715.0),
}

# share (percent) of intercity trip ends per category
REFERENCE_CATEGORY_SHARES = {
    "construction company": 14.65,
    "machinery electronics": 12.69,
    "chemical metallurgy": 2.57,
    "commercial trade": 3.42,
    "logistics warehouse": 9.47,
    "mining company": 6.03,
    "factory": 22.21,
    "farming base": 7.47,
    "industrial park": 18.49,
    "residential area": 1.31,
    "building materials market": 1.69,
}


def check_category(category: str) -> str:
    if category not in DEFAULT_POI_RADII:
        raise ConfigurationError(f"unknown POI category {category!r}")
    return category


@dataclass(frozen=True, slots=True)
class GpsRecord:
    truck_id: str
    lon: float
    lat: float
    timestamp: float
    reported_speed: Optional[float] = None
    heading: Optional[float] = None

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if self.reported_speed is not None and self.reported_speed < 0:
            raise ValueError(f"negative reported speed: {self.reported_speed}")


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered fixes of one truck, stored column-wise.

    ``reported_speed`` and ``heading`` hold NaN where the input had no value.
    """

    truck_id: str
    lon: np.ndarray
    lat: np.ndarray
    ts: np.ndarray
    reported_speed: np.ndarray = None
    heading: np.ndarray = None
    segment_id: int = 0

    def __post_init__(self):
        n = len(self.ts)
        for name in ("lon", "lat", "ts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("reported_speed", "heading"):
            arr = getattr(self, name)
            arr = np.full(n, np.nan) if arr is None else np.asarray(arr, dtype=np.float64)
            object.__setattr__(self, name, arr)
        if not (len(self.lon) == len(self.lat) == n == len(self.reported_speed) == len(self.heading)):
            raise ValueError("trajectory columns differ in length")

    @classmethod
    def from_records(cls, records: Sequence[GpsRecord], segment_id: int = 0) -> "Trajectory":
        if not records:
            raise ValueError("cannot build a trajectory from zero records")
        truck_ids = {r.truck_id for r in records}
        if len(truck_ids) != 1:
            raise ValueError(f"records belong to several trucks: {sorted(truck_ids)}")

        def opt(v):
            return np.nan if v is None else v

        return cls(
            truck_id=records[0].truck_id,
            lon=[r.lon for r in records],
            lat=[r.lat for r in records],
            ts=[r.timestamp for r in records],
            reported_speed=[opt(r.reported_speed) for r in records],
            heading=[opt(r.heading) for r in records],
            segment_id=segment_id,
        )

    def __len__(self) -> int:
        return len(self.ts)

    def __iter__(self) -> Iterator[GpsRecord]:
        return iter(self.records)

    @property
    def records(self) -> list[GpsRecord]:
        out = []
        for i in range(len(self)):
            sp, hd = self.reported_speed[i], self.heading[i]
            out.append(
                GpsRecord(
                    self.truck_id,
                    float(self.lon[i]),
                    float(self.lat[i]),
                    float(self.ts[i]),
                    None if np.isnan(sp) else float(sp),
                    None if np.isnan(hd) else float(hd),
                )
            )
        return out

    def slice(self, start: int, stop: int, segment_id: Optional[int] = None) -> "Trajectory":
        return Trajectory(
            self.truck_id,
            self.lon[start:stop],
            self.lat[start:stop],
            self.ts[start:stop],
            self.reported_speed[start:stop],
            self.heading[start:stop],
            self.segment_id if segment_id is None else segment_id,
        )


@dataclass(frozen=True)
class Thresholds:
    """Calibrated parameter set; defaults are the published heavy-truck values."""

    speed_threshold: float = 1.1  # km/h
    t_min: float = 1440.0  # s
    t_max: float = 46800.0  # s
    max_speed: float = 120.0  # km/h
    max_accel: float = 5.0  # m/s^2
    gap_limit: float = 3600.0  # s

    def __post_init__(self):
        if not 0 < self.speed_threshold < self.max_speed:
            raise ConfigurationError(
                f"need 0 < speed_threshold < max_speed, got {self.speed_threshold}, {self.max_speed}"
            )
        if not 0 < self.t_min < self.t_max:
            raise ConfigurationError(f"need 0 < t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.max_accel <= 0 or self.gap_limit <= 0:
            raise ConfigurationError("max_accel and gap_limit must be positive")


@dataclass(frozen=True, slots=True)
class TruckStop:
    truck_id: str
    centroid_lon: float
    centroid_lat: float
    t_start: float
    t_end: float
    n_points: int
    stop_class: Optional[StopClass] = None
    segment_id: int = 0

    @property
    def dwell(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True, slots=True)
class Poi:
    poi_id: str
    category: str
    center_lon: float
    center_lat: float

    def __post_init__(self):
        check_category(self.category)


@dataclass(frozen=True, slots=True)
class PoiCategoryParams:
    category: str
    valid_radius: float
    poi_radius: float

    def __post_init__(self):
        if not 0 < self.valid_radius < self.poi_radius:
            raise ConfigurationError(
                f"{self.category}: need 0 < valid_radius < poi_radius, "
                f"got {self.valid_radius}, {self.poi_radius}"
            )


def default_category_params() -> dict[str, PoiCategoryParams]:
    return {c: PoiCategoryParams(c, v, r) for c, (v, r) in DEFAULT_POI_RADII.items()}


@dataclass(frozen=True)
class RoadSegment:
    segment_id: str
    road_class: RoadClass
    centerline: tuple
    half_width: float = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "road_class", RoadClass(self.road_class))
        object.__setattr__(self, "centerline", tuple((float(x), float(y)) for x, y in self.centerline))
        if len(self.centerline) < 2:
            raise ValueError(f"road {self.segment_id} needs at least two vertices")
        if self.half_width is None:
            object.__setattr__(self, "half_width", self.road_class.half_width)


@dataclass(frozen=True)
class CityRegion:
    city_id: str
    polygons: tuple  # rings of (lon, lat), each closed

    def __post_init__(self):
        rings = []
        for ring in self.polygons:
            ring = tuple((float(x), float(y)) for x, y in ring)
            if len(ring) < 4 or ring[0] != ring[-1]:
                raise ValueError(f"city {self.city_id}: rings must be closed with >= 3 distinct vertices")
            rings.append(ring)
        if not rings:
            raise ValueError(f"city {self.city_id} has no rings")
        object.__setattr__(self, "polygons", tuple(rings))
