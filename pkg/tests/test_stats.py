import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tripends.errors import ConsistencyError, DegenerateFitError, DomainError, EmptyTableError
from tripends.model import StopClass, TruckStop
from tripends.stats import (
    LogMoments,
    build_od_matrix,
    category_shares,
    distance_duration_stats,
    fit_lognormal,
    intercity_ends,
    log_histogram,
    time_of_day_profiles,
)
from tripends.trips import LONG_TERM, MEDIUM_IN_POI, Trip, TripEnd

_ids = iter(range(10**9))


def end(category=None, t0=0.0, t1=100.0, city=None):
    s = TruckStop("T", 116.0, 40.0, t0, t1, 2, StopClass.LONG)
    reason = MEDIUM_IN_POI if category else LONG_TERM
    return TripEnd(s, reason, category, "p" if category else None, city, f"T#{next(_ids)}")


def trip(dep, arr, dist=1000.0, a=None, b=None, intercity=None):
    return Trip("T", end(t1=dep, t0=dep - 10), end(t0=arr, t1=arr + 10), dist, intercity, a, b)


# -- lognormal


def test_constant_sample_is_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_lognormal([math.e] * 5)


def test_two_point_sample():
    f = fit_lognormal([math.e, math.e**3])
    assert (f.mu, f.sigma, f.n) == (pytest.approx(2.0), pytest.approx(1.0), 2)


def test_recovers_planted_parameters():
    x = np.random.default_rng(0).lognormal(4.5, 0.8, 100_000)
    f = fit_lognormal(x)
    assert f.mu == pytest.approx(4.5, rel=0.02) and f.sigma == pytest.approx(0.8, rel=0.02)


def test_domain_and_size_errors():
    with pytest.raises(DomainError):
        fit_lognormal([1.0, 0.0, 2.0])
    with pytest.raises(DegenerateFitError):
        fit_lognormal([3.0])


def test_mode_and_density():
    f = fit_lognormal([1.0, math.e**2])
    assert f.mode == pytest.approx(math.exp(f.mu - f.sigma**2))
    x = np.geomspace(1e-3, 1e4, 200_001)
    assert np.trapezoid(f.pdf(x), x) == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e6), min_size=2, max_size=50), st.floats(1e-3, 1e3))
def test_scaling_shifts_mu_only(xs, c):
    if max(xs) / min(xs) < 1.001:
        return
    a, b = fit_lognormal(xs), fit_lognormal([c * x for x in xs])
    assert b.mu == pytest.approx(a.mu + math.log(c), abs=1e-9)
    assert b.sigma == pytest.approx(a.sigma, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e6), min_size=0, max_size=30), st.lists(st.floats(1e-3, 1e6), min_size=0, max_size=30))
def test_moments_merge_exactly(a, b):
    m = LogMoments.from_samples(a).merge(LogMoments.from_samples(b))
    w = LogMoments.from_samples(a + b)
    assert m.n == w.n
    assert m.mean == pytest.approx(w.mean, abs=1e-9)
    assert m.m2 == pytest.approx(w.m2, rel=1e-9, abs=1e-9)


# -- category shares


def test_all_factory():
    assert category_shares([end("factory")] * 3).shares == {"factory": 1.0}


def test_three_to_one():
    t = category_shares([end("factory")] * 3 + [end("mining company")])
    assert t.shares == {"mining company": 0.25, "factory": 0.75}


def test_uncategorized_excluded_from_base():
    t = category_shares([end("factory"), end(None), end(None)])
    assert t.shares == {"factory": 1.0} and t.uncategorized == 2


def test_no_categories_is_empty_table():
    with pytest.raises(EmptyTableError):
        category_shares([end(None)])


@given(st.lists(st.sampled_from(["factory", "farming base", "mining company", None]), min_size=1))
def test_shares_sum_to_one(cats):
    if all(c is None for c in cats):
        return
    assert sum(category_shares([end(c) for c in cats]).shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_intercity_ends_are_distinct():
    a, b, c = end("factory", 0, 100), end("factory", 200, 300), end(None, 400, 500)
    trips = [Trip("T", a, b, 1.0, True), Trip("T", b, c, 1.0, False)]
    assert intercity_ends(trips) == [a, b]


# -- OD matrix


def test_one_trip():
    od = build_od_matrix([trip(0, 100, a="A", b="B", intercity=True)], ["A", "B", "C"])
    assert od.entry("A", "B") == 1 and od.total == 1


def test_asymmetric_counts():
    trips = [trip(0, 100, a="A", b="B", intercity=True), trip(200, 300, a="B", b="A", intercity=True)]
    od = build_od_matrix(trips, ["A", "B"])
    assert od.counts.tolist() == [[0, 1], [1, 0]]


def test_non_intercity_and_unresolved_ignored():
    trips = [trip(0, 100, a="A", b="A", intercity=False), trip(200, 300, a="A", b=None, intercity=None)]
    assert build_od_matrix(trips, ["A"]).total == 0


def test_unknown_city_is_inconsistent():
    with pytest.raises(ConsistencyError):
        build_od_matrix([trip(0, 100, a="A", b="Z", intercity=True)], ["A", "B"])


# -- time of day


def test_departure_at_0810_local():
    # 00:10 UTC is 08:10 at UTC+8
    dep, arr = time_of_day_profiles([trip(600.0, 4000.0)], tz_offset_hours=8)
    assert dep[8] == 1 and dep.sum() == 1 and arr[9] == 1


def test_empty_profiles():
    dep, arr = time_of_day_profiles([])
    assert dep.tolist() == [0] * 24 and arr.tolist() == [0] * 24


@given(st.lists(st.floats(0, 1e8), min_size=1, max_size=20), st.integers(1, 1000))
def test_profiles_invariant_under_whole_days(ts, days):
    trips = [trip(t, t + 50) for t in ts]
    shifted = [trip(t + days * 86400, t + days * 86400 + 50) for t in ts]
    a, b = time_of_day_profiles(trips), time_of_day_profiles(shifted)
    assert a[0].tolist() == b[0].tolist() and a[1].sum() == len(ts)


# -- distance and duration


def test_single_trip_degenerate():
    with pytest.raises(DegenerateFitError):
        distance_duration_stats([trip(0, 100, dist=500.0)])
    res = distance_duration_stats([trip(0, 100, dist=500.0)], strict=False)
    assert res.distance_fit is None and "distance" in res.errors
    assert res.distance_hist.counts.sum() == 1 and np.count_nonzero(res.distance_hist.counts) == 1


def test_zero_distance_reports_trip_ids():
    t = trip(0, 100, dist=0.0)
    with pytest.raises(DomainError, match=t.trip_id):
        distance_duration_stats([t, trip(0, 200, dist=10.0)])


def test_planted_modes_recovered():
    rng = np.random.default_rng(3)
    sd, st_ = 0.6, 0.5
    dist = rng.lognormal(math.log(90_000) + sd**2, sd, 5000)
    dur = rng.lognormal(math.log(10_800) + st_**2, st_, 5000)
    trips = [trip(0.0, float(d), float(x)) for x, d in zip(dist, dur)]
    res = distance_duration_stats(trips)
    assert res.distance_fit.mode == pytest.approx(90_000, rel=0.1)
    assert res.duration_fit.mode == pytest.approx(10_800, rel=0.1)


def test_log_histogram_bins():
    h = log_histogram([1.0, 9.99, 10.0, 150.0], bins_per_decade=1)
    assert h.edges.tolist() == [1.0, 10.0, 100.0, 1000.0]
    assert h.counts.tolist() == [2, 1, 1]
    assert (h.density * np.diff(h.edges)).sum() == pytest.approx(1.0)
