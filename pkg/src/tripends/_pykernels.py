"""Pure-Python/numpy implementations of the per-record kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled version is tested against.
"""

import math

import numpy as np

from .geo import great_circle_distance, haversine


def pair_distances(lon, lat):
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if len(lon) < 2:
        return np.empty(0)
    return haversine(lon[:-1], lat[:-1], lon[1:], lat[1:])


def pair_speeds(lon, lat, ts):
    ts = np.asarray(ts, dtype=np.float64)
    return pair_distances(lon, lat) / np.diff(ts) * 3.6


def jump_scan(lon, lat, ts, max_speed, max_accel):
    """Codes per record: 0 keep, 1 speed jump, 2 acceleration jump, 3 non-increasing time.

    Each candidate is compared with the last *kept* record.
    """
    n = len(lon)
    codes = np.zeros(n, dtype=np.int8)
    if n == 0:
        return codes
    lon = np.asarray(lon, dtype=np.float64).tolist()
    lat = np.asarray(lat, dtype=np.float64).tolist()
    ts = np.asarray(ts, dtype=np.float64).tolist()
    last = 0
    v_last = math.nan
    for j in range(1, n):
        dt = ts[j] - ts[last]
        if not dt > 0:
            codes[j] = 3
            continue
        v = great_circle_distance((lon[last], lat[last]), (lon[j], lat[j])) / dt * 3.6
        if not math.isnan(v_last):
            if abs((v - v_last) / 3.6 / dt) > max_accel:
                codes[j] = 2
                continue
        if v > max_speed:
            codes[j] = 1
            continue
        last = j
        v_last = v
    return codes


def motion_status(lon, lat, ts, threshold):
    n = len(lon)
    status = np.zeros(n, dtype=np.uint8)
    if n > 1:
        status[1:] = pair_speeds(lon, lat, ts) <= threshold
        status[0] = status[1]
    return status


def stationary_runs(status):
    s = np.asarray(status, dtype=np.int8)
    if len(s) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    edges = np.diff(np.concatenate([[0], s, [0]]))
    starts = np.flatnonzero(edges == 1).astype(np.int64)
    ends = np.flatnonzero(edges == -1).astype(np.int64) - 1
    return starts, ends
