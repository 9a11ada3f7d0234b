"""Hot per-record kernels, compiled when available.

The Cython extension ``tripends._kernels`` is used if it imports; otherwise
(or when ``TRIPENDS_PURE_PYTHON=1`` is set) the numpy fallback in
``tripends._pykernels`` is used. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("TRIPENDS_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels
        BACKEND = "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_distances(lon, lat):
    """Great-circle distance (m) between consecutive fixes; length n-1."""
    return _impl.pair_distances(_f64(lon), _f64(lat))


def pair_speeds(lon, lat, ts):
    """Average speed (km/h) of each consecutive pair; length n-1."""
    return _impl.pair_speeds(_f64(lon), _f64(lat), _f64(ts))


def jump_scan(lon, lat, ts, max_speed, max_accel):
    return _impl.jump_scan(_f64(lon), _f64(lat), _f64(ts), float(max_speed), float(max_accel))


def motion_status(lon, lat, ts, threshold):
    return _impl.motion_status(_f64(lon), _f64(lat), _f64(ts), float(threshold))


def stationary_runs(status):
    return _impl.stationary_runs(np.ascontiguousarray(status, dtype=np.uint8))
