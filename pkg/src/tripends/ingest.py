"""Parsing of raw GPS files and the preprocessing cascade.

Rows flow through ``parse_records`` -> ``dedupe_and_sort`` ->
``bounds_filter`` -> ``jump_filter`` -> ``split_on_gaps``. Every input row
ends up either in a trajectory or in exactly one ``RejectionRecord``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .model import GpsRecord, Thresholds, Trajectory

log = logging.getLogger(__name__)

GPS_COLUMNS = ("id", "longitude", "latitude", "speed", "timestamp", "direction")
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
_EPOCH = datetime(1970, 1, 1)


class RejectReason(str, enum.Enum):
    DUPLICATE = "Duplicate"
    OUT_OF_BOUNDS = "OutOfBounds"
    SPEED_JUMP = "SpeedJump"
    ACCEL_JUMP = "AccelJump"
    NON_MONOTONIC_TIME = "NonMonotonicTime"
    MALFORMED = "Malformed"


_JUMP_REASONS = {
    1: RejectReason.SPEED_JUMP,
    2: RejectReason.ACCEL_JUMP,
    3: RejectReason.NON_MONOTONIC_TIME,
}


@dataclass(frozen=True, slots=True)
class RejectionRecord:
    truck_id: Optional[str]
    timestamp: Optional[float]
    reason: RejectReason
    source_line: int


class RecordBatch:
    """Column-wise collection of GPS records (a sequence of ``GpsRecord``).

    ``truck`` holds integer codes into ``truck_names``; ``line`` is the
    1-based source line of each record. Optional fields are NaN when absent.
    """

    __slots__ = ("truck", "truck_names", "lon", "lat", "ts", "speed", "heading", "line", "segment")

    def __init__(self, truck, truck_names, lon, lat, ts, speed=None, heading=None, line=None, segment=None):
        n = len(ts)
        self.truck = np.asarray(truck, dtype=np.int32)
        self.truck_names = list(truck_names)
        self.lon = np.asarray(lon, dtype=np.float64)
        self.lat = np.asarray(lat, dtype=np.float64)
        self.ts = np.asarray(ts, dtype=np.float64)
        self.speed = np.full(n, np.nan) if speed is None else np.asarray(speed, dtype=np.float64)
        self.heading = np.full(n, np.nan) if heading is None else np.asarray(heading, dtype=np.float64)
        self.line = np.arange(1, n + 1, dtype=np.int64) if line is None else np.asarray(line, dtype=np.int64)
        self.segment = None if segment is None else np.asarray(segment, dtype=np.int64)

    @classmethod
    def empty(cls) -> "RecordBatch":
        return cls([], [], [], [], [])

    @classmethod
    def from_records(cls, records: Iterable[GpsRecord]) -> "RecordBatch":
        records = list(records)
        names = sorted({r.truck_id for r in records})
        code = {name: i for i, name in enumerate(names)}

        def opt(v):
            return np.nan if v is None else v

        return cls(
            [code[r.truck_id] for r in records],
            names,
            [r.lon for r in records],
            [r.lat for r in records],
            [r.timestamp for r in records],
            [opt(r.reported_speed) for r in records],
            [opt(r.heading) for r in records],
        )

    def __len__(self) -> int:
        return len(self.ts)

    def __getitem__(self, i: int) -> GpsRecord:
        sp, hd = self.speed[i], self.heading[i]
        return GpsRecord(
            self.truck_names[self.truck[i]],
            float(self.lon[i]),
            float(self.lat[i]),
            float(self.ts[i]),
            None if math.isnan(sp) else float(sp),
            None if math.isnan(hd) else float(hd),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "RecordBatch":
        return RecordBatch(
            self.truck[idx],
            self.truck_names,
            self.lon[idx],
            self.lat[idx],
            self.ts[idx],
            self.speed[idx],
            self.heading[idx],
            self.line[idx],
            None if self.segment is None else self.segment[idx],
        )

    def truck_slices(self):
        """Yield ``(code, slice)`` for each run of equal truck codes (batch must be grouped)."""
        n = len(self)
        if n == 0:
            return
        cuts = np.flatnonzero(np.diff(self.truck)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [n]])
        for a, b in zip(starts.tolist(), stops.tolist()):
            yield int(self.truck[a]), slice(a, b)

    def rejections(self, idx, reason: RejectReason) -> list[RejectionRecord]:
        idx = np.asarray(idx)
        names = self.truck_names
        return [
            RejectionRecord(names[t], ts, reason, ln)
            for t, ts, ln in zip(self.truck[idx].tolist(), self.ts[idx].tolist(), self.line[idx].tolist())
        ]


class _TimeParser:
    """Parses local ``YYYY-MM-DD hh:mm:ss`` strings (or epoch numbers) to UTC epoch seconds."""

    def __init__(self, tz_offset_hours: float = 0.0):
        self.offset = tz_offset_hours * 3600.0
        self.cache: dict[str, float] = {}

    def __call__(self, text: str) -> float:
        try:
            return self.cache[text]
        except KeyError:
            pass
        try:
            value = float(text)
        except ValueError:
            value = (datetime.fromisoformat(text.strip()) - _EPOCH).total_seconds() - self.offset
        if not math.isfinite(value):
            raise ValueError("non-finite timestamp")
        if len(self.cache) < 1_000_000:
            self.cache[text] = value
        return value


def format_timestamp(ts: float, tz_offset_hours: float = 0.0) -> str:
    dt = _EPOCH + timedelta(seconds=ts + tz_offset_hours * 3600.0)
    if dt.microsecond:
        return dt.isoformat(sep=" ")
    return dt.strftime(TIME_FORMAT)


def _looks_like_header(row: Sequence[str]) -> bool:
    if not row:
        return False
    try:
        float(row[1])
        return False
    except (ValueError, IndexError):
        return row[0].strip().lower() in {"id", "truck_id", "vehicle_id", "index"} or "longitude" in (
            c.strip().lower() for c in row
        )


def _open_text(stream) -> io.TextIOBase:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    if isinstance(stream, (str, os.PathLike)):
        stream = open(stream, "rb")
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", errors="replace", newline="")


def _parse(stream, delimiter=",", header="auto", tz_offset_hours=0.0, with_segment=False):
    text = _open_text(stream)
    reader = csv.reader(text, delimiter=delimiter)
    parse_time = _TimeParser(tz_offset_hours)
    ncols = len(GPS_COLUMNS) + (1 if with_segment else 0)

    codes: dict[str, int] = {}
    truck, lon, lat, ts, speed, heading, lines, segment = [], [], [], [], [], [], [], []
    rejected: list[RejectionRecord] = []
    nan = math.nan
    first = True
    for row in reader:
        if not row:
            first = False
            continue
        line_no = reader.line_num
        if first:
            first = False
            if header is True or (header == "auto" and _looks_like_header(row)):
                continue
        try:
            if len(row) != ncols:
                raise ValueError("wrong column count")
            tid = row[0].strip()
            if not tid:
                raise ValueError("empty id")
            x = float(row[1])
            y = float(row[2])
            if not (-180.0 <= x <= 180.0 and -90.0 <= y <= 90.0):
                raise ValueError("coordinates out of range")
            sp = row[3].strip()
            sp = float(sp) if sp else nan
            if sp < 0 or math.isinf(sp):
                raise ValueError("bad speed")
            t = parse_time(row[4])
            hd = row[5].strip()
            hd = float(hd) if hd else nan
            if not (math.isnan(hd) or 0.0 <= hd < 360.0):
                raise ValueError("bad heading")
            seg = int(row[6]) if with_segment else 0
        except (ValueError, IndexError):
            rejected.append(RejectionRecord(row[0].strip() or None if row else None, None, RejectReason.MALFORMED, line_no))
            continue
        code = codes.get(tid)
        if code is None:
            code = codes[tid] = len(codes)
        truck.append(code)
        lon.append(x)
        lat.append(y)
        ts.append(t)
        speed.append(sp)
        heading.append(hd)
        lines.append(line_no)
        if with_segment:
            segment.append(seg)

    # recode trucks so that code order equals sorted-name order
    names = sorted(codes)
    remap = np.empty(len(codes), dtype=np.int32)
    for new, name in enumerate(names):
        remap[codes[name]] = new
    truck_arr = remap[np.asarray(truck, dtype=np.int64)] if truck else np.empty(0, dtype=np.int32)
    batch = RecordBatch(
        truck_arr, names, lon, lat, ts, speed, heading, lines, segment if with_segment else None
    )
    return batch, rejected


def parse_records(stream, delimiter=",", header="auto", tz_offset_hours=0.0):
    """Parse delimiter-separated GPS rows.

    Parameters
    ----------
    stream : binary file object, bytes, or path
        Columns ``id, longitude, latitude, speed, timestamp, direction``.
    header : {"auto", True, False}
        Whether the first non-blank line is a header; ``"auto"`` sniffs it.
    tz_offset_hours : float
        Offset of the local timestamps from UTC.

    Returns
    -------
    (RecordBatch, list of RejectionRecord)
        Well-formed rows in input order, and one ``Malformed`` rejection per
        bad row. Blank lines are not rows and are skipped.
    """
    return _parse(stream, delimiter, header, tz_offset_hours)


def dedupe_and_sort(batch: RecordBatch):
    """Sort by (truck, timestamp) and drop repeated timestamps (first occurrence wins)."""
    if len(batch) == 0:
        return batch, []
    order = np.lexsort((batch.line, batch.ts, batch.truck))
    s = batch.take(order)
    dup = np.zeros(len(s), dtype=bool)
    dup[1:] = (s.truck[1:] == s.truck[:-1]) & (s.ts[1:] == s.ts[:-1])
    rejected = s.rejections(np.flatnonzero(dup), RejectReason.DUPLICATE)
    return s.take(~dup), rejected


@dataclass(frozen=True)
class BoundingBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def contains(self, lon, lat):
        lon = np.asarray(lon)
        lat = np.asarray(lat)
        return (lon >= self.min_lon) & (lon <= self.max_lon) & (lat >= self.min_lat) & (lat <= self.max_lat)


@dataclass(frozen=True)
class PolygonRegion:
    ring: tuple

    def contains(self, lon, lat):
        from .spatial import points_in_rings

        return points_in_rings(np.asarray(lon, dtype=float), np.asarray(lat, dtype=float), [np.asarray(self.ring)])


CHINA_BBOX = BoundingBox(73.5, 18.0, 135.1, 53.6)


def bounds_filter(batch: RecordBatch, region):
    """Drop records outside ``region`` (closed: boundary points are kept)."""
    if region is None:
        raise ConfigurationError("no bounding region configured")
    inside = np.asarray(region.contains(batch.lon, batch.lat), dtype=bool)
    return batch.take(inside), batch.rejections(np.flatnonzero(~inside), RejectReason.OUT_OF_BOUNDS)


def jump_filter(batch: RecordBatch, thresholds: Thresholds):
    """Reject speed and acceleration jumps, anchoring on the last kept record of each truck."""
    keep = np.ones(len(batch), dtype=bool)
    rejected = []
    for _, sl in batch.truck_slices():
        codes = kernels.jump_scan(
            batch.lon[sl], batch.lat[sl], batch.ts[sl], thresholds.max_speed, thresholds.max_accel
        )
        bad = np.flatnonzero(codes)
        if len(bad):
            keep[sl.start + bad] = False
            for code in np.unique(codes[bad]):
                rejected += batch.rejections(sl.start + bad[codes[bad] == code], _JUMP_REASONS[int(code)])
    return batch.take(keep), rejected


def split_on_gaps(batch: RecordBatch, gap_limit: float) -> list[Trajectory]:
    """Cut each truck's records wherever consecutive fixes are more than ``gap_limit`` apart."""
    out = []
    for code, sl in batch.truck_slices():
        ts = batch.ts[sl]
        cuts = np.flatnonzero(np.diff(ts) > gap_limit) + 1
        bounds = np.concatenate([[0], cuts, [len(ts)]])
        name = batch.truck_names[code]
        for seg_id, (a, b) in enumerate(zip(bounds[:-1].tolist(), bounds[1:].tolist())):
            s = slice(sl.start + a, sl.start + b)
            out.append(
                Trajectory(name, batch.lon[s], batch.lat[s], batch.ts[s], batch.speed[s], batch.heading[s], seg_id)
            )
    return out


@dataclass
class CascadeResult:
    trajectories: list
    rejections: list
    n_input: int

    @property
    def n_accepted(self) -> int:
        return sum(len(t) for t in self.trajectories)


def clean(batch: RecordBatch, thresholds: Thresholds, region=CHINA_BBOX):
    """Dedupe, bounds and jump filtering; returns the kept batch and the rejections."""
    batch, rej = dedupe_and_sort(batch)
    batch, r = bounds_filter(batch, region)
    rej += r
    batch, r = jump_filter(batch, thresholds)
    rej += r
    return batch, rej


def run_cascade(batch: RecordBatch, thresholds: Thresholds, region=CHINA_BBOX, malformed=(), workers=1):
    """Full preprocessing of a parsed batch into gap-split trajectories."""
    n_input = len(batch) + len(malformed)
    if workers > 1 and len(batch.truck_names) > 1:
        from .parallel import map_parts

        parts = _partition(batch, workers)
        results = map_parts(_clean_part, [(p, thresholds, region) for p in parts], workers)
        trajs, rej = [], list(malformed)
        for t, r in results:
            trajs += t
            rej += r
    else:
        kept, rej = clean(batch, thresholds, region)
        rej = list(malformed) + rej
        trajs = split_on_gaps(kept, thresholds.gap_limit)
    rej.sort(key=lambda r: r.source_line)
    return CascadeResult(trajs, rej, n_input)


def _clean_part(args):
    batch, thresholds, region = args
    kept, rej = clean(batch, thresholds, region)
    return split_on_gaps(kept, thresholds.gap_limit), rej


def _partition(batch: RecordBatch, n: int) -> list[RecordBatch]:
    groups = batch.truck % n
    return [batch.take(np.flatnonzero(groups == g)) for g in range(n) if np.any(groups == g)]


# ---------------------------------------------------------------- file outputs


def write_cleaned(trajectories: Sequence[Trajectory], path, tz_offset_hours=0.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GPS_COLUMNS + ("segment_id",))
        cache: dict[float, str] = {}
        for tr in trajectories:
            for x, y, t, sp, hd in zip(
                tr.lon.tolist(), tr.lat.tolist(), tr.ts.tolist(), tr.reported_speed.tolist(), tr.heading.tolist()
            ):
                st = cache.get(t)
                if st is None:
                    st = cache[t] = format_timestamp(t, tz_offset_hours)
                w.writerow(
                    (tr.truck_id, repr(x), repr(y), "" if sp != sp else repr(sp), st, "" if hd != hd else repr(hd), tr.segment_id)
                )


def write_gps(batch: RecordBatch, path, tz_offset_hours=0.0):
    """Raw GPS file in input layout, records in batch order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GPS_COLUMNS)
        cache: dict[float, str] = {}
        names = batch.truck_names
        for k, x, y, t, sp, hd in zip(
            batch.truck.tolist(),
            batch.lon.tolist(),
            batch.lat.tolist(),
            batch.ts.tolist(),
            batch.speed.tolist(),
            batch.heading.tolist(),
        ):
            st = cache.get(t)
            if st is None:
                st = cache[t] = format_timestamp(t, tz_offset_hours)
            w.writerow((names[k], repr(x), repr(y), "" if sp != sp else repr(sp), st, "" if hd != hd else repr(hd)))


def read_cleaned(path, tz_offset_hours=0.0) -> list[Trajectory]:
    batch, bad = _parse(path, header="auto", tz_offset_hours=tz_offset_hours, with_segment=True)
    if bad:
        raise ConfigurationError(f"{path}: {len(bad)} malformed rows in a cleaned-records file")
    order = np.lexsort((batch.ts, batch.segment, batch.truck))
    batch = batch.take(order)
    out = []
    n = len(batch)
    if n == 0:
        return out
    key_change = np.flatnonzero((np.diff(batch.truck) != 0) | (np.diff(batch.segment) != 0)) + 1
    starts = np.concatenate([[0], key_change])
    stops = np.concatenate([key_change, [n]])
    for a, b in zip(starts.tolist(), stops.tolist()):
        s = slice(a, b)
        out.append(
            Trajectory(
                batch.truck_names[batch.truck[a]],
                batch.lon[s],
                batch.lat[s],
                batch.ts[s],
                batch.speed[s],
                batch.heading[s],
                int(batch.segment[a]),
            )
        )
    return out


def write_rejections(rejections: Sequence[RejectionRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("truck_id", "timestamp", "reason", "source_line"))
        for r in rejections:
            ts = "" if r.timestamp is None else repr(r.timestamp)
            w.writerow((r.truck_id or "", ts, r.reason.value, r.source_line))
