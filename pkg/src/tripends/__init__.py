"""Identify freight trip ends of heavy trucks from raw GPS trajectories."""

from .kernels import BACKEND
from .model import (
    CityRegion,
    GpsRecord,
    Poi,
    PoiCategoryParams,
    RoadClass,
    RoadSegment,
    StopClass,
    Thresholds,
    Trajectory,
    TruckStop,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CityRegion",
    "GpsRecord",
    "Poi",
    "PoiCategoryParams",
    "RoadClass",
    "RoadSegment",
    "StopClass",
    "Thresholds",
    "Trajectory",
    "TruckStop",
]
