"""Run configuration: one key = value file with a section per stage, fully checked up front."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigurationError
from .ingest import CHINA_BBOX, BoundingBox
from .model import DEFAULT_POI_RADII, PoiCategoryParams, Thresholds
from .parallel import default_workers


@dataclass
class CalibrationSettings:
    speed_bin_width: float = 0.1
    speed_window: int = 5
    smoothness_ratio: float = 0.2
    bins_per_decade: float = 50.0
    dwell_window: int = 10
    irregularity_ratio: float = 1.0
    min_count: int = 10
    min_segment_bins: int = 20
    poi_bin_width: float = 5.0
    poi_max_distance: float = 2000.0
    poi_smoothing_window: int = 3
    allow_fallback: bool = True


@dataclass
class RunConfig:
    gps: Optional[str] = None
    pois: Optional[str] = None
    roads: Optional[str] = None
    cities: Optional[str] = None
    output_dir: str = "out"
    calibration: Optional[str] = None  # report path; default <output_dir>/calibration.ini
    thresholds: Thresholds = field(default_factory=Thresholds)
    explicit_thresholds: frozenset = frozenset()  # keys set in [thresholds]
    delimiter: str = ","
    header: str = "auto"
    tz_offset_hours: float = 0.0
    region: Optional[object] = CHINA_BBOX
    calibration_settings: CalibrationSettings = field(default_factory=CalibrationSettings)
    category_overrides: dict = field(default_factory=dict)
    workers: int = field(default_factory=default_workers)
    use_calibration: bool = True
    stats_bins_per_decade: float = 10.0
    match_radius: float = 200.0
    match_window: float = 1800.0

    def out(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def calibration_path(self) -> str:
        return self.calibration or self.out("calibration.ini")

    def category_params(self, detected: Optional[dict] = None) -> dict:
        """Table of POI radii: defaults, then a calibration report, then config overrides."""
        out = {c: PoiCategoryParams(c, v, r) for c, (v, r) in DEFAULT_POI_RADII.items()}
        if detected:
            out.update(detected)
        out.update(self.category_overrides)
        return out

    def require(self, *names):
        """Fail fast when a path the stage needs is missing."""
        for name in names:
            path = getattr(self, name) if hasattr(self, name) else name
            if not path:
                raise ConfigurationError(f"[paths] {name} is not set")
            if not os.path.exists(path):
                raise ConfigurationError(f"{name}: {path} does not exist")


_SECTIONS = {
    "paths": {"gps", "pois", "roads", "cities", "output_dir", "calibration"},
    "thresholds": {f.name for f in dataclasses.fields(Thresholds)},
    "ingest": {"delimiter", "header", "tz_offset_hours", "region"},
    "calibration": {f.name for f in dataclasses.fields(CalibrationSettings)},
    "categories": None,  # free keys: category names
    "run": {"workers", "use_calibration"},
    "stats": {"bins_per_decade"},
    "score": {"match_radius", "match_window"},
}


def _parse_region(text: str):
    t = text.strip().lower()
    if t in ("china", "default"):
        return CHINA_BBOX
    if t in ("none", "off", "world"):
        return BoundingBox(-180.0, -90.0, 180.0, 90.0)
    try:
        lon0, lat0, lon1, lat1 = (float(v) for v in t.split(","))
    except ValueError:
        raise ConfigurationError(f"region must be 'china', 'none' or 'lon0,lat0,lon1,lat1', got {text!r}") from None
    return BoundingBox(lon0, lat0, lon1, lat1)


def _typed(section, key, kind, value):
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in ("1", "yes", "true", "on"):
                return True
            if v in ("0", "no", "false", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key} = {value!r} is not a valid {kind.__name__}") from None


def load_config(path: Optional[str]) -> RunConfig:
    """Read and validate a run configuration; relative paths resolve against the file's directory."""
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigurationError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep category names as written
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
        allowed = _SECTIONS[section]
        if allowed is not None:
            unknown = set(cp[section]) - allowed
            if unknown:
                raise ConfigurationError(f"{path}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    if cp.has_section("paths"):
        for key, value in cp["paths"].items():
            value = value.strip()
            if value:
                setattr(cfg, key, os.path.normpath(os.path.join(base, value)))

    if cp.has_section("thresholds"):
        kinds = {f.name: float for f in dataclasses.fields(Thresholds)}
        vals = {k: _typed("thresholds", k, kinds[k], v) for k, v in cp["thresholds"].items()}
        cfg.thresholds = Thresholds(**vals)
        cfg.explicit_thresholds = frozenset(vals)

    if cp.has_section("ingest"):
        sec = cp["ingest"]
        if "delimiter" in sec:
            d = sec["delimiter"]
            cfg.delimiter = {"tab": "\t", "\\t": "\t", "comma": ",", "semicolon": ";"}.get(d.strip().lower(), d)
        if "header" in sec:
            h = sec["header"].strip().lower()
            if h not in ("auto", "yes", "no"):
                raise ConfigurationError("[ingest] header must be auto, yes or no")
            cfg.header = h
        if "tz_offset_hours" in sec:
            cfg.tz_offset_hours = _typed("ingest", "tz_offset_hours", float, sec["tz_offset_hours"])
        if "region" in sec:
            cfg.region = _parse_region(sec["region"])

    if cp.has_section("calibration"):
        kinds = {f.name: f.type for f in dataclasses.fields(CalibrationSettings)}
        conv = {"float": float, "int": int, "bool": bool}
        vals = {k: _typed("calibration", k, conv[kinds[k]], v) for k, v in cp["calibration"].items()}
        cfg.calibration_settings = CalibrationSettings(**vals)

    if cp.has_section("categories"):
        for cat, value in cp["categories"].items():
            try:
                valid, radius = (float(v) for v in value.split(","))
            except ValueError:
                raise ConfigurationError(f"[categories] {cat} must be 'valid_radius, poi_radius'") from None
            try:
                cfg.category_overrides[cat] = PoiCategoryParams(cat, valid, radius)
            except ValueError as exc:
                raise ConfigurationError(f"[categories] {cat}: {exc}") from None

    if cp.has_section("run"):
        sec = cp["run"]
        if "workers" in sec:
            cfg.workers = _typed("run", "workers", int, sec["workers"])
            if cfg.workers < 1:
                raise ConfigurationError("[run] workers must be at least 1")
        if "use_calibration" in sec:
            cfg.use_calibration = _typed("run", "use_calibration", bool, sec["use_calibration"])

    if cp.has_section("stats") and "bins_per_decade" in cp["stats"]:
        cfg.stats_bins_per_decade = _typed("stats", "bins_per_decade", float, cp["stats"]["bins_per_decade"])

    if cp.has_section("score"):
        for key in ("match_radius", "match_window"):
            if key in cp["score"]:
                setattr(cfg, key, _typed("score", key, float, cp["score"][key]))
    return cfg
