"""Time the per-record kernels on both backends and an ingest + stop-detection pass.

Usage: python3 benchmarks/bench_kernels.py [--records N] [--repeat R]
"""

import argparse
import importlib
import timeit

import numpy as np

from tripends import _pykernels
from tripends.ingest import RecordBatch, run_cascade
from tripends.model import Thresholds
from tripends.stops import detect_all


def synthetic_track(n, seed=0):
    """One truck at 30 s cadence alternating driving legs and parked spells."""
    rng = np.random.default_rng(seed)
    moving = (np.arange(n) // 200) % 2 == 0
    leg = np.arange(n) // 400
    # legs alternate east and west so the track stays inside the default region
    step = np.where(moving, rng.uniform(1e-3, 4e-3, n), 0.0) * np.where(leg % 2, -1.0, 1.0)
    lon = 116.0 + np.cumsum(step)
    lat = 30.0 + np.cumsum(np.where(moving, rng.normal(0, 5e-4, n), 0.0))
    ts = np.arange(n) * 30.0
    return lon, lat, ts


def bench_kernels(impl, lon, lat, ts, repeat):
    status = impl.motion_status(lon, lat, ts, 1.1)
    cases = {
        "pair_speeds": lambda: impl.pair_speeds(lon, lat, ts),
        "jump_scan": lambda: impl.jump_scan(lon, lat, ts, 120.0, 5.0),
        "motion_status": lambda: impl.motion_status(lon, lat, ts, 1.1),
        "stationary_runs": lambda: impl.stationary_runs(status),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--records", type=int, default=1_000_000, help="records per run (default 1e6)")
    p.add_argument("--repeat", type=int, default=3, help="best of R runs (default 3)")
    args = p.parse_args()

    lon, lat, ts = synthetic_track(args.records)
    backends = {"python": _pykernels}
    try:
        backends["cython"] = importlib.import_module("tripends._kernels")
    except ImportError:
        print("compiled extension not built; timing the python backend only")
    results = {name: bench_kernels(impl, lon, lat, ts, args.repeat) for name, impl in backends.items()}

    print(f"{args.records} records, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in results) + ("     speedup" if len(results) == 2 else ""))
    for kernel in results["python"]:
        row = f"{kernel:<18}" + "".join(f"{results[b][kernel] * 1e3:>10.1f}ms" for b in results)
        if len(results) == 2:
            row += f"{results['python'][kernel] / results['cython'][kernel]:>11.1f}x"
        print(row)

    batch = RecordBatch(np.zeros(len(ts), dtype=np.int32), ["T"], lon, lat, ts)
    start = timeit.default_timer()
    res = run_cascade(batch, Thresholds())
    stops = detect_all(res.trajectories, Thresholds())
    dt = timeit.default_timer() - start
    print(f"cascade + stops: {len(stops)} stops, {dt:.2f} s, {args.records / dt * 60 / 1e6:.1f} M records/min")


if __name__ == "__main__":
    main()
