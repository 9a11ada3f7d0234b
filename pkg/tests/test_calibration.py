import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import broken_power_law, empirical_cdf
from tripends import calibration as cal
from tripends.errors import FitFailureError, InsufficientDataError, RadiusUnreachableError


def lognormal_quantiles(mode, sigma, n):
    mu = np.log(mode) + sigma**2
    return stats.lognorm(sigma, scale=np.exp(mu)).ppf((np.arange(n) + 0.5) / n)


# -- histograms


def test_histogram_basic_and_left_closed():
    assert cal.build_histogram([0.5, 1.5], 1.0).counts.tolist() == [1, 1]
    assert cal.build_histogram([0.999999, 1.0], 1.0).counts.tolist() == [1, 1]
    assert len(cal.build_histogram([], 1.0).counts) == 0


def test_histogram_rejects_below_origin():
    h = cal.build_histogram([-1.0, 0.2, 3.5], 1.0, origin=0.0)
    assert h.n_rejected == 1
    assert h.counts.tolist() == [1, 0, 0, 1]
    assert h.total + h.n_rejected == 3


@given(st.lists(st.floats(0, 100), max_size=50), st.lists(st.floats(0, 100), max_size=50))
def test_histogram_merge_equals_histogram_of_union(a, b):
    merged = cal.build_histogram(a, 0.5).merge(cal.build_histogram(b, 0.5))
    whole = cal.build_histogram(a + b, 0.5)
    n = max(len(merged.counts), len(whole.counts))
    assert np.array_equal(np.pad(merged.counts, (0, n - len(merged.counts))), np.pad(whole.counts, (0, n - len(whole.counts))))


def test_histogram_merge_needs_same_binning():
    with pytest.raises(ValueError):
        cal.build_histogram([1], 1.0).merge(cal.build_histogram([1], 0.5))


def test_roughness_windows():
    logs = np.array([0.0, 1.0, 1.0, 3.0, 3.0])
    fwd = cal.successive_roughness(logs, 2)
    assert fwd[:3].tolist() == [0.5, 1.0, 1.0] and np.isnan(fwd[3:]).all()
    back = cal.successive_roughness(logs, 2, trailing=True)
    assert np.isnan(back[:2]).all() and back[2:].tolist() == [0.5, 1.0, 1.0]


# -- speed threshold


def _speed_histogram(seed, jitter_bins=11):
    # expected traffic counts from a smooth lognormal plus erratic low-speed counts
    width = 0.1
    edges = np.arange(0, 150.0 + width / 2, width)
    sigma = 1.5
    mass = np.diff(stats.lognorm.cdf(edges, sigma, scale=np.exp(np.log(60) + sigma**2)))
    counts = np.round(mass * 1e8).astype(np.int64)
    rng = np.random.default_rng(seed)
    counts[:jitter_bins] += np.round(1e6 * np.exp(rng.normal(0, 1.5, jitter_bins))).astype(np.int64)
    return cal.Histogram(width, 0.0, counts)


@pytest.mark.parametrize("seed", range(5))
def test_speed_threshold_brackets_planted_boundary(seed):
    det = cal.detect_speed_threshold(_speed_histogram(seed))
    assert not det.fallback
    assert 0.8 <= det.value <= 1.4
    assert det.value == pytest.approx(1.1)


def test_speed_threshold_smooth_histogram_returns_first_edge():
    x = np.arange(200)
    counts = np.round(1e6 * np.exp(-((x - 100) / 60.0) ** 2)).astype(np.int64)
    det = cal.detect_speed_threshold(cal.Histogram(0.1, 0.0, counts))
    assert det.value == 0.0 and not det.fallback


def test_speed_threshold_all_rough_falls_back():
    rng = np.random.default_rng(3)
    counts = np.round(1e4 * np.exp(rng.normal(0, 3, 100))).astype(np.int64)
    det = cal.detect_speed_threshold(cal.Histogram(0.1, 0.0, counts), default=1.1)
    assert det.fallback and det.value == 1.1


def test_speed_threshold_insufficient():
    with pytest.raises(InsufficientDataError):
        cal.detect_speed_threshold(cal.build_histogram(np.arange(9) * 0.1 + 0.05, 0.1))


# -- broken power law


@pytest.mark.parametrize("seed", range(4))
def test_broken_power_law_recovery(seed):
    x = broken_power_law(np.random.default_rng(seed), 100_000, 1.3, 0.6, 1440, 60, 46800)
    fit = cal.fit_broken_power_law(x)
    assert abs(fit.break_point / 1440 - 1) <= 0.15
    assert abs(fit.alpha1 - 1.3) <= 0.1
    assert abs(fit.alpha2 - 0.6) <= 0.1
    assert x.min() < fit.break_point < x.max()


def test_single_power_law_gives_equal_slopes():
    x = broken_power_law(np.random.default_rng(7), 100_000, 1.0, 1.0, 1000, 60, 46800)
    fit = cal.fit_broken_power_law(x)
    assert abs(fit.alpha1 - 1.0) <= 0.1 and abs(fit.alpha2 - 1.0) <= 0.1


def test_broken_power_law_identical_samples_fail():
    with pytest.raises(FitFailureError):
        cal.fit_broken_power_law(np.full(2000, 300.0))


def test_broken_power_law_needs_samples():
    with pytest.raises(InsufficientDataError):
        cal.fit_broken_power_law(np.arange(1, 999.0))


def test_broken_power_law_break_range():
    x = broken_power_law(np.random.default_rng(1), 20_000, 1.3, 0.6, 1440, 60, 46800)
    fit = cal.fit_broken_power_law(x, break_range=(3000, 6000))
    assert 3000 <= fit.break_point <= 6000
    with pytest.raises(FitFailureError):
        cal.fit_broken_power_law(x, break_range=(1e9, 2e9))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_broken_power_law_scale_equivariant(c):
    x = broken_power_law(np.random.default_rng(11), 5000, 1.3, 0.6, 1440, 60, 46800)
    a = cal.fit_broken_power_law(x)
    b = cal.fit_broken_power_law(x * c)
    assert b.break_point == pytest.approx(a.break_point * c, rel=1e-6)
    assert b.alpha1 == pytest.approx(a.alpha1, abs=1e-6)
    assert b.alpha2 == pytest.approx(a.alpha2, abs=1e-6)


def test_fitted_density_is_continuous_at_break():
    x = broken_power_law(np.random.default_rng(2), 50_000, 1.3, 0.6, 1440, 60, 46800)
    fit = cal.fit_broken_power_law(x)
    lo = fit.density(fit.break_point * (1 - 1e-9))
    hi = fit.density(fit.break_point)
    assert lo == pytest.approx(hi, rel=1e-6)


# -- lattice binning


def test_lattice_step():
    assert cal.lattice_step([60.0, 90.0, 300.0]) == 30.0
    assert cal.lattice_step([60.5, 90.0]) is None
    assert cal.lattice_step([]) is None


def test_lattice_bins_count_lattice_points():
    x = np.arange(1, 201) * 30.0
    lb = cal.log_binned(x, bins_per_decade=10, resolution=30.0)
    assert lb.counts.sum() == 200
    # one sample per lattice point: every populated bin has density 1 / (n q)
    ok = lb.usable
    assert np.allclose(lb.density[ok], 1 / (200 * 30.0))
    assert np.all(lb.counts[~ok] == 0)
    for k in np.flatnonzero(ok):
        inside = x[(x >= lb.edges[k]) & ((x < lb.edges[k + 1]) | (k == len(lb.counts) - 1))]
        assert lb.centers[k] == pytest.approx(np.exp(np.log(inside).mean()))


def test_lattice_binning_removes_staircase():
    # uniform dwell on a 30 s lattice has a flat density; plain log bins do not see it flat
    x = np.repeat(np.arange(2, 400) * 30.0, 50)
    plain = cal.log_binned(x, 50)
    aware = cal.log_binned(x, 50, resolution=30.0)
    spread = lambda d: np.ptp(np.log(d[d > 0]))  # noqa: E731
    assert spread(aware.density) < 1e-9 < spread(plain.density)


def test_lattice_resolution_must_be_positive():
    with pytest.raises(ValueError):
        cal.log_binned([30.0, 60.0], resolution=0.0)


# -- time thresholds


@pytest.mark.parametrize("seed", range(4))
def test_time_thresholds_on_planted_mixture(seed):
    rng = np.random.default_rng(seed)
    body = broken_power_law(rng, 100_000, 1.3, 0.6, 1440, 60, 46800)
    tail = rng.uniform(46800, 1e6, 40)
    res = cal.detect_time_thresholds(np.concatenate([body, tail]))
    assert 1224 <= res.t_min <= 1656
    assert 46800 / 1.5 <= res.t_max <= 46800 * 1.5
    assert not res.t_min_fallback and not res.t_max_fallback


def test_time_thresholds_clean_law_falls_back_for_t_max():
    x = broken_power_law(np.random.default_rng(5), 100_000, 1.3, 0.6, 1440, 60, 46800)
    res = cal.detect_time_thresholds(x)
    assert res.t_max == 46800 and res.t_max_fallback
    assert res.t_min < res.t_max


def test_time_thresholds_ordered_even_when_break_is_late():
    x = broken_power_law(np.random.default_rng(5), 20_000, 1.3, 0.6, 80_000, 60, 200_000)
    res = cal.detect_time_thresholds(x)
    assert res.t_min < res.t_max


def test_time_thresholds_insufficient():
    with pytest.raises(InsufficientDataError):
        cal.detect_time_thresholds(np.arange(1, 500.0))


# -- POI radii


def test_poi_radius_stratified_mode_350():
    d = lognormal_quantiles(350, 0.3, 100_000)
    p = cal.detect_poi_radii(d, "factory")
    assert abs(p.valid_radius - 350) <= 5
    s = np.sort(d)
    assert cal.empirical_cdf(s, p.poi_radius) >= 2 * cal.empirical_cdf(s, p.valid_radius)


def test_poi_radius_matches_brute_force_cdf_scan():
    d = np.random.default_rng(0).rayleigh(350, 2000)
    p = cal.detect_poi_radii(d, "factory")
    target = 2 * empirical_cdf(d, p.valid_radius)
    smallest = min(r for r in d if empirical_cdf(d, r) >= target)
    assert p.poi_radius == smallest
    assert p.valid_radius < p.poi_radius


def test_poi_radius_random_samples_near_mode():
    d = stats.lognorm(0.2, scale=350 * np.exp(0.04)).rvs(100_000, random_state=1)
    p = cal.detect_poi_radii(d, "factory")
    assert abs(p.valid_radius - 350) <= 25


def test_poi_radius_factory_shape():
    # gamma law with mode 350 m whose CDF doubles between 350 m and 670 m
    from scipy import optimize

    def law(k):
        return stats.gamma(k, scale=350 / (k - 1))

    k = optimize.brentq(lambda k: law(k).cdf(670) - 2 * law(k).cdf(350), 1.1, 20)
    d = law(k).ppf((np.arange(200_000) + 0.5) / 200_000)
    p = cal.detect_poi_radii(d, "factory")
    assert abs(p.valid_radius - 350) <= 10
    assert abs(p.poi_radius - 670) <= 20


def test_poi_radius_point_mass_unreachable():
    with pytest.raises(RadiusUnreachableError):
        cal.detect_poi_radii(np.full(600, 100.0), "factory")


def test_poi_radius_far_edge_unreachable():
    d = np.concatenate([np.full(300, 10.0), np.full(300, 5000.0)])
    with pytest.raises(RadiusUnreachableError):
        cal.detect_poi_radii(d, "factory")


def test_poi_radius_insufficient():
    with pytest.raises(InsufficientDataError):
        cal.detect_poi_radii(np.arange(499.0), "factory")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(50, 800), st.floats(0.1, 0.8))
def test_poi_radius_invariants(seed, mode, sigma):
    d = stats.lognorm(sigma, scale=mode * np.exp(sigma**2)).rvs(600, random_state=seed)
    try:
        p = cal.detect_poi_radii(d, "x")
    except RadiusUnreachableError:
        return
    s = np.sort(d)
    assert p.valid_radius < p.poi_radius
    assert cal.empirical_cdf(s, p.poi_radius) >= 2 * cal.empirical_cdf(s, p.valid_radius)


# -- report


def test_report_round_trip(tmp_path):
    fit = cal.BrokenPowerLawFit(1.3, 0.6, 1440.0, 0.01)
    rep = cal.CalibrationReport(
        speed_threshold=1.1,
        speed_fallback=False,
        n_speed_samples=10,
        t_min=1440.0,
        t_max=46800.0,
        t_min_fallback=False,
        t_max_fallback=True,
        n_dwell_samples=5,
        fit=fit,
        poi={"factory": cal.default_poi_entry("factory", 3, "too few")},
    )
    path = tmp_path / "calibration.ini"
    rep.write(path)
    back = cal.CalibrationReport.read(path)
    assert back.speed_threshold == 1.1 and not back.speed_fallback
    assert back.fit.alpha1 == 1.3 and back.t_max_fallback
    assert back.category_params()["factory"].poi_radius == 670
    assert back.errors == ["factory: too few"]
    second = tmp_path / "again.ini"
    back.write(second)
    assert second.read_text() == path.read_text()
