"""Stop detection: motion status per fix, stationary runs, dwell classes."""

from __future__ import annotations

import csv
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .model import MotionStatus, StopClass, Thresholds, Trajectory, TruckStop

STOP_COLUMNS = (
    "truck_id",
    "segment_id",
    "centroid_lon",
    "centroid_lat",
    "t_start",
    "t_end",
    "dwell",
    "n_points",
    "stop_class",
)


def mark_motion_status(traj: Trajectory, speed_threshold: float) -> np.ndarray:
    """Per-fix status (``MotionStatus`` values) from the average speed of the incoming pair.

    A fix is stationary when the speed from its predecessor is at most
    ``speed_threshold`` km/h. The first fix copies the second; a lone fix is moving.
    """
    return kernels.motion_status(traj.lon, traj.lat, traj.ts, speed_threshold)


def extract_stops(traj: Trajectory, statuses) -> list[TruckStop]:
    statuses = np.asarray(statuses, dtype=np.uint8)
    if len(statuses) != len(traj):
        raise ValueError("statuses are not aligned with the trajectory")
    starts, ends = kernels.stationary_runs(statuses)
    if len(starts) == 0:
        return []
    stops_ = ends + 1
    counts = stops_ - starts
    out = []
    lon, lat, ts = traj.lon, traj.lat, traj.ts
    for a, b, n in zip(starts.tolist(), stops_.tolist(), counts.tolist()):
        x = lon[a:b]
        y = lat[a:b]
        cx = min(max(x.sum() / n, x.min()), x.max())
        cy = min(max(y.sum() / n, y.min()), y.max())
        out.append(TruckStop(traj.truck_id, float(cx), float(cy), float(ts[a]), float(ts[b - 1]), n, None, traj.segment_id))
    return out


def classify_dwell(dwell: float, t_min: float, t_max: float) -> StopClass:
    if dwell < t_min:
        return StopClass.SHORT
    if dwell < t_max:
        return StopClass.MEDIUM
    return StopClass.LONG


def classify_stop(stop: TruckStop, t_min: float, t_max: float) -> StopClass:
    """Short below ``t_min``, Long at or above ``t_max``, Medium in between (boundaries go up)."""
    if not t_min < t_max:
        raise ValueError(f"need t_min < t_max, got {t_min}, {t_max}")
    return classify_dwell(stop.dwell, t_min, t_max)


def with_class(stop: TruckStop, stop_class: StopClass) -> TruckStop:
    return TruckStop(
        stop.truck_id, stop.centroid_lon, stop.centroid_lat, stop.t_start, stop.t_end, stop.n_points, stop_class, stop.segment_id
    )


def detect_stops(traj: Trajectory, thresholds: Thresholds) -> list[TruckStop]:
    """Stops of one segment, classified against the thresholds."""
    status = mark_motion_status(traj, thresholds.speed_threshold)
    return [
        with_class(s, classify_dwell(s.dwell, thresholds.t_min, thresholds.t_max)) for s in extract_stops(traj, status)
    ]


def detect_all(trajectories: Iterable[Trajectory], thresholds: Thresholds) -> list[TruckStop]:
    out = []
    for tr in trajectories:
        out += detect_stops(tr, thresholds)
    return out


def write_stops(stops: Sequence[TruckStop], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STOP_COLUMNS)
        for s in stops:
            w.writerow(stop_row(s))


def stop_row(s: TruckStop) -> tuple:
    return (
        s.truck_id,
        s.segment_id,
        repr(s.centroid_lon),
        repr(s.centroid_lat),
        repr(s.t_start),
        repr(s.t_end),
        repr(s.dwell),
        s.n_points,
        "" if s.stop_class is None else s.stop_class.value,
    )


def stop_from_row(row: dict) -> TruckStop:
    cls = row["stop_class"]
    return TruckStop(
        row["truck_id"],
        float(row["centroid_lon"]),
        float(row["centroid_lat"]),
        float(row["t_start"]),
        float(row["t_end"]),
        int(row["n_points"]),
        StopClass(cls) if cls else None,
        int(row["segment_id"]),
    )


def read_stops(path) -> list[TruckStop]:
    with open(path, newline="") as fh:
        return [stop_from_row(r) for r in csv.DictReader(fh)]


__all__ = [
    "MotionStatus",
    "mark_motion_status",
    "extract_stops",
    "classify_stop",
    "classify_dwell",
    "detect_stops",
    "detect_all",
    "write_stops",
    "read_stops",
]
