"""Spherical-earth distance and kinematics between GPS fixes."""

import math

import numpy as np

from .errors import RejectedPairError
from .model import EARTH_RADIUS_M

KMH_PER_MS = 3.6


def great_circle_distance(p1, p2):
    """Haversine distance in meters between two ``(lon, lat)`` points in degrees."""
    lon1, lat1 = p1
    lon2, lat2 = p2
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    s_dphi = math.sin((phi2 - phi1) * 0.5)
    s_dlam = math.sin(math.radians(lon2 - lon1) * 0.5)
    a = s_dphi * s_dphi + math.cos(phi1) * math.cos(phi2) * s_dlam * s_dlam
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(a, 1.0)))


def haversine(lon1, lat1, lon2, lat2):
    """Vectorized haversine over numpy arrays (meters)."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    s_dphi = np.sin((phi2 - phi1) * 0.5)
    s_dlam = np.sin(np.radians(np.asarray(lon2) - np.asarray(lon1)) * 0.5)
    a = s_dphi * s_dphi + np.cos(phi1) * np.cos(phi2) * s_dlam * s_dlam
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def avg_speed(rec_i, rec_next):
    """Average speed in km/h from one record to the next.

    Raises
    ------
    RejectedPairError
        If the timestamps do not strictly increase.
    """
    dt = rec_next.timestamp - rec_i.timestamp
    if not dt > 0:
        raise RejectedPairError(
            f"non-increasing timestamps {rec_i.timestamp} -> {rec_next.timestamp} for {rec_i.truck_id}"
        )
    d = great_circle_distance((rec_i.lon, rec_i.lat), (rec_next.lon, rec_next.lat))
    return d / dt * KMH_PER_MS


def accel_between(v_prev, v_next, dt):
    """Signed acceleration in m/s^2 between two speeds given in km/h."""
    if not dt > 0:
        raise RejectedPairError(f"non-positive time step {dt}")
    return (v_next - v_prev) / KMH_PER_MS / dt


def unit_vectors(lon, lat):
    """Points on the unit sphere; chord length between them is monotone in arc length."""
    lam = np.radians(np.asarray(lon, dtype=np.float64))
    phi = np.radians(np.asarray(lat, dtype=np.float64))
    c = np.cos(phi)
    return np.column_stack([c * np.cos(lam), c * np.sin(lam), np.sin(phi)])


def chord_to_meters(chord):
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(np.asarray(chord) * 0.5, 1.0))


def meters_to_chord(m):
    return 2.0 * np.sin(np.minimum(np.asarray(m, dtype=np.float64) / (2.0 * EARTH_RADIUS_M), np.pi / 2))
