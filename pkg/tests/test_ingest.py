import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import R_EARTH
from tripends.errors import ConfigurationError
from tripends.ingest import (
    CHINA_BBOX,
    BoundingBox,
    PolygonRegion,
    RecordBatch,
    RejectReason,
    bounds_filter,
    dedupe_and_sort,
    format_timestamp,
    jump_filter,
    parse_records,
    read_cleaned,
    run_cascade,
    split_on_gaps,
    write_cleaned,
    write_gps,
)
from tripends.model import GpsRecord, Thresholds

ROWS = """\
60817be2749c77,119.786484,34.387562,0,2018-05-19 12:03:20,132
60817be2749c77,119.787315,34.388016,30,2018-05-19 12:03:50,169
60817be2749c77,119.788536,34.388783,25,2018-05-19 12:04:20,70
60817be2749c77,119.789902,34.38847,7,2018-05-19 12:04:50,206
60817be2749c77,119.789902,34.38847,0,2018-05-19 12:05:20,206
"""


def parse(text, **kw):
    return parse_records(io.BytesIO(text.encode()), **kw)


def batch_of(points, truck="T"):
    """``points``: (lon, lat, t) triples."""
    return RecordBatch.from_records([GpsRecord(truck, x, y, t) for x, y, t in points])


def east(lon, lat, meters):
    return lon + math.degrees(meters / (R_EARTH * math.cos(math.radians(lat))))


# -- parsing


def test_parse_table_row():
    batch, bad = parse("id,longitude,latitude,speed,timestamp,direction\n" + ROWS, tz_offset_hours=8)
    assert bad == [] and len(batch) == 5
    r = batch[0]
    assert (r.truck_id, r.lon, r.lat, r.reported_speed, r.heading) == ("60817be2749c77", 119.786484, 34.387562, 0, 132)
    # 12:03:20 at UTC+8 is 04:03:20 UTC
    assert format_timestamp(r.timestamp) == "2018-05-19 04:03:20"
    assert format_timestamp(r.timestamp, 8) == "2018-05-19 12:03:20"
    assert batch.line.tolist() == [2, 3, 4, 5, 6]


def test_parse_sniffs_absent_header():
    batch, bad = parse(ROWS)
    assert len(batch) == 5 and bad == []


def test_parse_malformed_rows_are_rejected_not_fatal():
    text = ROWS + "T,119.0,abc,0,2018-05-19 12:00:00,0\nT,119.0\nT,119.0,34.0,0,not a time,0\n,119.0,34.0,0,2018-05-19 12:00:00,0\n"
    batch, bad = parse(text)
    assert len(batch) == 5
    assert [r.reason for r in bad] == [RejectReason.MALFORMED] * 4
    assert [r.source_line for r in bad] == [6, 7, 8, 9]


def test_parse_optional_fields_and_epoch_times():
    batch, bad = parse("T,119.0,34.0,,1526702600,\n")
    assert bad == []
    r = batch[0]
    assert r.timestamp == 1526702600 and r.reported_speed is None and r.heading is None


def test_parse_empty_input():
    batch, bad = parse("")
    assert len(batch) == 0 and bad == []


def test_parse_tab_delimited():
    batch, bad = parse(ROWS.replace(",", "\t"), delimiter="\t")
    assert len(batch) == 5 and bad == []


# -- dedupe


def test_identical_rows_keep_one():
    batch, rej = dedupe_and_sort(batch_of([(116, 40, 0), (116, 40, 0)]))
    assert len(batch) == 1 and [r.reason for r in rej] == [RejectReason.DUPLICATE]
    assert rej[0].source_line == 2


def test_out_of_order_rows_are_sorted():
    batch, rej = dedupe_and_sort(batch_of([(116, 40, 60), (116, 40, 0), (116, 40, 30)]))
    assert batch.ts.tolist() == [0, 30, 60] and rej == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 20), st.integers(0, 5)), max_size=60))
def test_same_timestamp_first_wins(rows):
    recs = [GpsRecord(f"T{k}", 116 + x * 1e-3, 40, float(t)) for k, t, x in rows]
    batch, rej = dedupe_and_sort(RecordBatch.from_records(recs))
    seen = {}
    for line, r in enumerate(recs, start=1):
        seen.setdefault((r.truck_id, r.timestamp), (line, r))
    assert len(batch) == len(seen) and len(rej) == len(recs) - len(seen)
    kept = {(batch[i].truck_id, batch[i].timestamp): int(batch.line[i]) for i in range(len(batch))}
    assert kept == {k: v[0] for k, v in seen.items()}


# -- bounds


def test_bounds_filter_china():
    batch = batch_of([(0, 0, 0), (119.786484, 34.387562, 30), (73.5, 18.0, 60), (135.1, 53.6, 90)])
    kept, rej = bounds_filter(batch, CHINA_BBOX)
    assert kept.ts.tolist() == [30, 60, 90]
    assert [(r.reason, r.timestamp) for r in rej] == [(RejectReason.OUT_OF_BOUNDS, 0)]


def test_bounds_filter_polygon_boundary_kept():
    region = PolygonRegion(((0, 0), (2, 0), (2, 2), (0, 2), (0, 0)))
    kept, rej = bounds_filter(batch_of([(1, 1, 0), (2, 1, 30), (3, 1, 60)]), region)
    assert kept.ts.tolist() == [0, 30] and len(rej) == 1


def test_bounds_filter_needs_region():
    with pytest.raises(ConfigurationError):
        bounds_filter(batch_of([(1, 1, 0)]), None)


# -- jumps


def test_speed_jump():
    pts = [(116, 40, 0), (east(116, 40, 2000), 40, 30)]
    kept, rej = jump_filter(batch_of(pts), Thresholds())
    assert len(kept) == 1 and [r.reason for r in rej] == [RejectReason.SPEED_JUMP]


def test_stationary_pairs_kept():
    kept, rej = jump_filter(batch_of([(116, 40, 0), (116, 40, 30), (116, 40, 60)]), Thresholds())
    assert len(kept) == 3 and rej == []


def test_accel_jump():
    # speeds 0 then 160 m/s over 30 s: 5.33 m/s^2 beats 5 m/s^2 (checked before the speed limit)
    pts = [(116, 40, 0), (116, 40, 30), (east(116, 40, 4800), 40, 60)]
    kept, rej = jump_filter(batch_of(pts), Thresholds())
    assert len(kept) == 2 and [r.reason for r in rej] == [RejectReason.ACCEL_JUMP]


def test_jump_anchor_is_last_kept_record():
    # a single teleport does not hide the good fixes after it
    pts = [(116, 40, 0), (116, 40, 30), (116.5, 40, 60), (116, 40, 90), (116, 40, 120)]
    kept, rej = jump_filter(batch_of(pts), Thresholds())
    assert kept.ts.tolist() == [0, 30, 90, 120] and len(rej) == 1


# -- gaps


def _gap_batch(gaps):
    ts = np.concatenate([[0], np.cumsum(gaps)])
    return batch_of([(116, 40, float(t)) for t in ts])


def test_no_gap_one_segment():
    assert len(split_on_gaps(_gap_batch([30] * 10), 3600)) == 1


def test_gap_over_limit_splits():
    segs = split_on_gaps(_gap_batch([30] * 5 + [3601] + [30] * 5), 3600)
    assert [len(s) for s in segs] == [6, 6] and [s.segment_id for s in segs] == [0, 1]


def test_gap_at_limit_does_not_split():
    assert len(split_on_gaps(_gap_batch([30, 3600, 30]), 3600)) == 1


def test_single_record_segments_allowed():
    segs = split_on_gaps(_gap_batch([4000, 4000]), 3600)
    assert [len(s) for s in segs] == [1, 1, 1]


# -- full cascade


def noisy_corpus(seed, n_trucks=5, n=400):
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_trucks):
        t = np.cumsum(rng.choice([30.0, 30.0, 30.0, 60.0, 5000.0], n, p=[0.5, 0.3, 0.1, 0.09, 0.01]))
        lon = 116 + np.cumsum(rng.normal(0, 2e-3, n))
        lat = 30 + np.cumsum(rng.normal(0, 2e-3, n))
        jump = rng.random(n) < 0.02
        lon[jump] += rng.choice([-1, 1], jump.sum()) * 0.3
        lat[rng.random(n) < 0.01] = -10.0  # out of bounds
        dup = rng.random(n) < 0.02
        t[dup] = np.roll(t, 1)[dup]
        rows += [GpsRecord(f"T{k}", float(x), float(y), float(s)) for x, y, s in zip(lon, lat, t)]
    order = rng.permutation(len(rows))
    return RecordBatch.from_records([rows[i] for i in order])


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("workers", [1, 2])
def test_cascade_conservation_and_idempotence(seed, workers):
    batch = noisy_corpus(seed)
    res = run_cascade(batch, Thresholds(), CHINA_BBOX, workers=workers)
    assert res.n_accepted + len(res.rejections) == len(batch)
    assert len({r.source_line for r in res.rejections}) == len(res.rejections)
    for tr in res.trajectories:
        d = np.diff(tr.ts)
        assert np.all(d > 0) and np.all(d <= 3600)
    again = run_cascade(
        RecordBatch.from_records([r for tr in res.trajectories for r in tr.records]), Thresholds(), CHINA_BBOX
    )
    assert again.rejections == []
    assert again.n_accepted == res.n_accepted


def test_cascade_parallel_matches_serial():
    batch = noisy_corpus(7)
    a = run_cascade(batch, Thresholds(), CHINA_BBOX, workers=1)
    b = run_cascade(batch, Thresholds(), CHINA_BBOX, workers=3)
    assert a.rejections == b.rejections
    key = lambda t: (t.truck_id, t.segment_id)  # noqa: E731
    assert [(key(t), t.ts.tolist()) for t in sorted(a.trajectories, key=key)] == [
        (key(t), t.ts.tolist()) for t in sorted(b.trajectories, key=key)
    ]


def test_cleaned_file_round_trip(tmp_path):
    res = run_cascade(noisy_corpus(3), Thresholds(), CHINA_BBOX)
    path = tmp_path / "cleaned.csv"
    write_cleaned(res.trajectories, path, tz_offset_hours=8)
    back = read_cleaned(path, tz_offset_hours=8)
    key = lambda t: (t.truck_id, t.segment_id)  # noqa: E731
    a, b = sorted(res.trajectories, key=key), sorted(back, key=key)
    assert [key(t) for t in a] == [key(t) for t in b]
    for x, y in zip(a, b):
        assert x.lon.tolist() == y.lon.tolist() and x.ts.tolist() == y.ts.tolist()


def test_raw_gps_round_trip(tmp_path):
    batch = noisy_corpus(4, n_trucks=2, n=50)
    path = tmp_path / "gps.csv"
    write_gps(batch, path, tz_offset_hours=8)
    back, bad = parse_records(str(path), tz_offset_hours=8)
    assert bad == [] and list(back) == list(batch)


def test_custom_bbox_contains_is_closed():
    box = BoundingBox(0, 0, 1, 1)
    assert box.contains([0, 1, 1.0000001], [0, 1, 0.5]).tolist() == [True, True, False]
