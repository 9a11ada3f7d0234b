# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-record kernels. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, fabs, M_PI, NAN, isnan

cnp.import_array()

cdef double EARTH_R = 6371000.0
cdef double DEG = M_PI / 180.0


cdef inline double _hav(double lon1, double lat1, double lon2, double lat2) noexcept nogil:
    cdef double phi1 = lat1 * DEG
    cdef double phi2 = lat2 * DEG
    cdef double s_dphi = sin((phi2 - phi1) * 0.5)
    cdef double s_dlam = sin((lon2 - lon1) * DEG * 0.5)
    cdef double a = s_dphi * s_dphi + cos(phi1) * cos(phi2) * s_dlam * s_dlam
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_R * asin(sqrt(a))


def pair_distances(const double[::1] lon, const double[::1] lat):
    cdef Py_ssize_t n = lon.shape[0]
    cdef Py_ssize_t i
    out = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n - 1):
            o[i] = _hav(lon[i], lat[i], lon[i + 1], lat[i + 1])
    return out


def pair_speeds(const double[::1] lon, const double[::1] lat, const double[::1] ts):
    cdef Py_ssize_t n = lon.shape[0]
    cdef Py_ssize_t i
    out = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n - 1):
            o[i] = _hav(lon[i], lat[i], lon[i + 1], lat[i + 1]) / (ts[i + 1] - ts[i]) * 3.6
    return out


def jump_scan(const double[::1] lon, const double[::1] lat, const double[::1] ts,
              double max_speed, double max_accel):
    cdef Py_ssize_t n = lon.shape[0]
    codes = np.zeros(n, dtype=np.int8)
    cdef cnp.int8_t[::1] c = codes
    cdef Py_ssize_t j, last = 0
    cdef double v_last = NAN
    cdef double dt, v, a
    if n == 0:
        return codes
    with nogil:
        for j in range(1, n):
            dt = ts[j] - ts[last]
            if not dt > 0:
                c[j] = 3
                continue
            v = _hav(lon[last], lat[last], lon[j], lat[j]) / dt * 3.6
            if not isnan(v_last):
                a = (v - v_last) / 3.6 / dt
                if fabs(a) > max_accel:
                    c[j] = 2
                    continue
            if v > max_speed:
                c[j] = 1
                continue
            last = j
            v_last = v
    return codes


def motion_status(const double[::1] lon, const double[::1] lat, const double[::1] ts,
                  double threshold):
    cdef Py_ssize_t n = lon.shape[0]
    cdef Py_ssize_t i
    status = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] s = status
    cdef double v
    with nogil:
        for i in range(n - 1):
            v = _hav(lon[i], lat[i], lon[i + 1], lat[i + 1]) / (ts[i + 1] - ts[i]) * 3.6
            s[i + 1] = 1 if v <= threshold else 0
        if n > 1:
            s[0] = s[1]
    return status


def stationary_runs(const cnp.uint8_t[::1] status):
    cdef Py_ssize_t n = status.shape[0]
    cdef Py_ssize_t i, k = 0
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] st = starts
    cdef cnp.int64_t[::1] en = ends
    cdef bint inside = False
    with nogil:
        for i in range(n):
            if status[i]:
                if not inside:
                    st[k] = i
                    inside = True
            elif inside:
                en[k] = i - 1
                k += 1
                inside = False
        if inside:
            en[k] = n - 1
            k += 1
    return starts[:k].copy(), ends[:k].copy()
