import numpy as np
import pytest

from oracles import haversine_m, offset, point_segment_distance_m
from tripends.errors import AmbiguousCityError, ConfigurationError
from tripends.model import CityRegion, Poi, PoiCategoryParams, RoadSegment
from tripends.spatial import (
    CityIndex,
    PoiIndex,
    RoadIndex,
    densify,
    is_on_road_scan,
    locate_city_scan,
    nearest_poi_scan,
    nearest_road_scan,
    read_cities,
    read_pois,
    read_roads,
    write_cities,
    write_pois,
    write_roads,
)

LON0, LAT0 = 116.0, 40.0


def square(cid, x0, y0, size):
    return CityRegion(cid, [[(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]])


def random_pois(rng, n, categories=("factory", "mining company")):
    lon = rng.uniform(LON0, LON0 + 2, n)
    lat = rng.uniform(LAT0, LAT0 + 2, n)
    return [Poi(f"p{k:05d}", categories[k % len(categories)], float(x), float(y)) for k, (x, y) in enumerate(zip(lon, lat))]


# -- POIs


def test_poi_at_query_point():
    idx = PoiIndex([Poi("a", "factory", LON0, LAT0)])
    assert idx.nearest(LON0, LAT0, "factory") == ("a", 0.0)


def test_empty_category_gives_none():
    idx = PoiIndex([Poi("a", "factory", LON0, LAT0)])
    assert idx.nearest(LON0, LAT0, "mining company") is None


def test_unknown_category_is_configuration_error():
    idx = PoiIndex([])
    with pytest.raises(ConfigurationError):
        idx.nearest(LON0, LAT0, "spaceport")
    with pytest.raises(ConfigurationError):
        Poi("x", "spaceport", 0, 0)


def test_poi_ties_go_to_lowest_id():
    a = offset(LON0, LAT0, 100, 0)
    b = offset(LON0, LAT0, -100, 0)
    idx = PoiIndex([Poi("z", "factory", *a), Poi("b", "factory", *b)])
    assert idx.nearest(LON0, LAT0, "factory")[0] == "b"


def test_nearest_poi_matches_scan():
    rng = np.random.default_rng(2)
    pois = random_pois(rng, 10_000)
    idx = PoiIndex(pois)
    for x, y in zip(rng.uniform(LON0 - 0.2, LON0 + 2.2, 1000), rng.uniform(LAT0 - 0.2, LAT0 + 2.2, 1000)):
        for cat in ("factory", "mining company"):
            got, want = idx.nearest(x, y, cat), nearest_poi_scan(pois, (x, y), cat)
            assert got[0] == want[0]
            assert got[1] == pytest.approx(want[1], abs=1e-6)


def test_nearest_distance_monotone_as_pois_added():
    rng = np.random.default_rng(3)
    pois = random_pois(rng, 200, ("factory",))
    q = [(float(x), float(y)) for x, y in zip(rng.uniform(LON0, LON0 + 2, 30), rng.uniform(LAT0, LAT0 + 2, 30))]
    prev = [np.inf] * len(q)
    for n in (1, 10, 50, 200):
        idx = PoiIndex(pois[:n])
        cur = [idx.nearest(x, y, "factory")[1] for x, y in q]
        assert all(c <= p for c, p in zip(cur, prev))
        prev = cur


def test_match_picks_smallest_ratio():
    params = {
        "factory": PoiCategoryParams("factory", 350, 670),
        "industrial park": PoiCategoryParams("industrial park", 450, 849),
    }
    f = offset(LON0, LAT0, 400, 0)  # ratio 400/670 = 0.60
    p = offset(LON0, LAT0, -450, 0)  # ratio 450/849 = 0.53
    idx = PoiIndex([Poi("f", "factory", *f), Poi("p", "industrial park", *p)], params)
    m = idx.match(LON0, LAT0)
    assert (m.category, m.poi_id) == ("industrial park", "p")
    assert m.ratio == pytest.approx(450 / 849, rel=1e-6)
    assert idx.match(*offset(LON0, LAT0, 0, 3000)) is None


def test_poi_file_round_trip(tmp_path):
    pois = random_pois(np.random.default_rng(0), 20)
    write_pois(pois, tmp_path / "p.csv")
    assert read_pois(tmp_path / "p.csv") == pois


# -- roads


def test_point_on_vertex_is_zero():
    idx = RoadIndex([RoadSegment("r", "Primary", [(LON0, LAT0), (LON0 + 0.01, LAT0)])])
    assert idx.distance_to_nearest_road(LON0, LAT0) == ("r", 0.0)


def test_perpendicular_distance():
    # long diagonal edge, straight in lon/lat; probe 5 m off its middle along the local normal
    a, b = (LON0, LAT0), (LON0 + 0.2, LAT0 + 0.1)
    mid = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
    ex = (b[0] - a[0]) * np.cos(np.radians(mid[1]))
    ey = b[1] - a[1]
    norm = np.hypot(ex, ey)
    p = offset(*mid, -5 * ey / norm, 5 * ex / norm)
    idx = RoadIndex([RoadSegment("r", "Primary", [a, b])])
    sid, d = idx.distance_to_nearest_road(*p)
    assert sid == "r" and d == pytest.approx(5.0, abs=0.01)


def test_no_roads_gives_none():
    idx = RoadIndex([])
    assert idx.distance_to_nearest_road(LON0, LAT0) is None
    assert idx.is_on_road(LON0, LAT0) == (False, None)


@pytest.mark.parametrize(
    "road_class, dist, on_road",
    [("Primary", 5.0, True), ("Tertiary", 6.0, False), ("Primary", 8.75, False), ("Motorway", 5.2, True)],
)
def test_on_road_examples(road_class, dist, on_road):
    # an east-west road; query points due north of its middle
    road = RoadSegment("r", road_class, [offset(LON0, LAT0, -500, 0), offset(LON0, LAT0, 500, 0)])
    idx = RoadIndex([road])
    p = offset(LON0, LAT0, 0, dist)
    d = idx.distance_to_nearest_road(*p)[1]
    assert d == pytest.approx(dist, abs=1e-6)
    assert idx.is_on_road(*p)[0] is on_road
    assert is_on_road_scan([road], p) is on_road


def test_densify_bounds_edge_length():
    pts = densify([(LON0, LAT0), (LON0 + 0.5, LAT0 + 0.2)], 1000)
    lengths = [haversine_m(*a, *b) for a, b in zip(pts, pts[1:])]
    assert max(lengths) <= 1000 and pts[0] == (LON0, LAT0) and tuple(pts[-1]) == (LON0 + 0.5, LAT0 + 0.2)


def test_edge_distance_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(40):
        a = (LON0 + rng.uniform(-0.003, 0.003), LAT0 + rng.uniform(-0.003, 0.003))
        b = (a[0] + rng.uniform(-0.008, 0.008), a[1] + rng.uniform(-0.008, 0.008))
        p = (LON0 + rng.uniform(-0.01, 0.01), LAT0 + rng.uniform(-0.01, 0.01))
        got = RoadIndex([RoadSegment("r", "Primary", [a, b])]).distance_to_nearest_road(*p)[1]
        assert got == pytest.approx(point_segment_distance_m(*p, *a, *b), abs=0.01)


def random_roads(rng, n):
    roads = []
    for k in range(n):
        x, y = rng.uniform(LON0, LON0 + 1), rng.uniform(LAT0, LAT0 + 1)
        pts = [(x, y)]
        for _ in range(rng.integers(1, 5)):
            x, y = x + rng.uniform(-0.02, 0.02), y + rng.uniform(-0.02, 0.02)
            pts.append((x, y))
        roads.append(RoadSegment(f"r{k:04d}", ["Motorway", "Primary", "Secondary", "Tertiary"][k % 4], pts))
    return roads


def test_nearest_road_matches_scan():
    rng = np.random.default_rng(6)
    roads = random_roads(rng, 300)
    idx = RoadIndex(roads)
    for x, y in zip(rng.uniform(LON0, LON0 + 1, 300), rng.uniform(LAT0, LAT0 + 1, 300)):
        got, want = idx.distance_to_nearest_road(x, y), nearest_road_scan(roads, (x, y))
        assert got[0] == want[0] and got[1] == pytest.approx(want[1], abs=1e-6)
        got = idx.distance_to_nearest_road(x, y, ["Motorway"])
        want = nearest_road_scan(roads, (x, y), ["Motorway"])
        assert got[0] == want[0] and got[1] == pytest.approx(want[1], abs=1e-6)


def test_on_road_implies_close_centerline():
    rng = np.random.default_rng(7)
    roads = random_roads(rng, 50)
    idx = RoadIndex(roads)
    hits = 0
    for road in roads:
        for (x0, y0), (x1, y1) in zip(road.centerline, road.centerline[1:]):
            t = rng.random()
            p = offset(x0 + t * (x1 - x0), y0 + t * (y1 - y0), rng.normal(0, 5), rng.normal(0, 5))
            on, _ = idx.is_on_road(*p)
            assert on == is_on_road_scan(roads, p)
            if on:
                hits += 1
                assert idx.distance_to_nearest_road(*p)[1] < 8.75
    assert hits > 0


def test_road_file_round_trip(tmp_path):
    roads = random_roads(np.random.default_rng(8), 10)
    write_roads(roads, tmp_path / "r.csv")
    assert read_roads(tmp_path / "r.csv") == roads


def test_multilinestring_rows_become_parts(tmp_path):
    (tmp_path / "r.csv").write_text(
        'segment_id,road_class,geometry\nm1,Motorway,"MULTILINESTRING ((116 40, 116.1 40), (117 40, 117 40.1))"\n'
    )
    roads = read_roads(tmp_path / "r.csv")
    assert [r.segment_id for r in roads] == ["m1#0", "m1#1"]


# -- cities


def test_city_centroid_and_outside():
    idx = CityIndex([square("A", 116, 40, 1)])
    assert idx.locate(116.5, 40.5) == "A"
    assert idx.locate(118, 40.5) is None


def test_city_boundary_counts_as_inside():
    idx = CityIndex([square("A", 116, 40, 1), square("B", 117, 40, 1)])
    assert idx.locate(116, 40.5) == "A"
    assert idx.locate(117, 40.5) == "A"  # shared border: lowest id


def test_overlapping_cities_are_ambiguous():
    idx = CityIndex([square("A", 116, 40, 1), square("B", 116.5, 40, 1)])
    with pytest.raises(AmbiguousCityError) as err:
        idx.locate(116.75, 40.5)
    assert list(err.value.candidates) == ["A", "B"]


def test_city_with_hole():
    outer = [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]
    hole = [(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)]
    idx = CityIndex([CityRegion("ring", [outer, hole])])
    assert idx.locate(0.5, 0.5) == "ring"
    assert idx.locate(2, 2) is None


def random_cities(rng, n_side=6):
    cities = []
    for i in range(n_side):
        for j in range(n_side):
            x0, y0 = LON0 + i * 0.5, LAT0 + j * 0.5
            ring = [
                (x0 + rng.uniform(0, 0.1), y0 + rng.uniform(0, 0.1)),
                (x0 + 0.4 + rng.uniform(0, 0.1), y0 + rng.uniform(0, 0.1)),
                (x0 + 0.25, y0 + 0.2),
                (x0 + 0.4 + rng.uniform(0, 0.1), y0 + 0.4 + rng.uniform(0, 0.1)),
                (x0 + rng.uniform(0, 0.1), y0 + 0.4 + rng.uniform(0, 0.1)),
            ]
            cities.append(CityRegion(f"c{i}{j}", [ring + [ring[0]]]))
    return cities


def test_locate_matches_scan():
    rng = np.random.default_rng(9)
    cities = random_cities(rng)
    idx = CityIndex(cities)
    lons, lats = rng.uniform(LON0 - 0.1, LON0 + 3.1, 1000), rng.uniform(LAT0 - 0.1, LAT0 + 3.1, 1000)
    got = idx.locate_many(lons, lats)
    assert got == [locate_city_scan(cities, (x, y)) for x, y in zip(lons, lats)]
    assert sum(g is not None for g in got) > 300


def test_city_file_round_trip(tmp_path):
    cities = random_cities(np.random.default_rng(10), 2)
    write_cities(cities, tmp_path / "c.csv")
    assert read_cities(tmp_path / "c.csv") == cities
