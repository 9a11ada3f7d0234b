"""Command-line entry point: ``tripends <subcommand> [options]``."""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigurationError, InsufficientDataError, TripEndsError
from .stops import stop_from_row

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_INSUFFICIENT = 2

log = logging.getLogger("tripends")


def _config(args):
    cfg = load_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        cfg.workers = args.workers
    return cfg


def cmd_ingest(args):
    pipeline.run_ingest(_config(args))


def cmd_calibrate(args):
    pipeline.run_calibrate(_config(args))


def cmd_extract(args):
    pipeline.run_extract(_config(args))


def cmd_stats(args):
    pipeline.run_stats(_config(args))


def cmd_synth(args):
    from .synth import generate_fleet, read_plan, write_fleet, write_run_config

    plan = read_plan(args.plan, args.seed)
    fleet = generate_fleet(plan, args.workers or 1)
    paths = write_fleet(fleet, args.out)
    write_run_config(paths, plan, os.path.join(args.out, "config.ini"))
    log.info(
        "synth: %d trucks, %d GPS rows, %d truth visits (%d trip ends) in %s",
        plan.n_trucks,
        len(fleet.batch),
        len(fleet.truth.visits),
        len(fleet.truth.trip_ends()),
        args.out,
    )


def _read_predictions(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        return [stop_from_row(r) for r in csv.DictReader(fh)]


def cmd_score(args):
    from .synth import GroundTruth, score_trip_ends

    if not os.path.exists(args.truth):
        raise FileNotFoundError(args.truth)
    predicted = _read_predictions(args.predictions)
    score = score_trip_ends(predicted, GroundTruth.read(args.truth), args.match_radius, args.match_window)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["score"] = {
        "precision": "undefined" if score.precision is None else repr(score.precision),
        "recall": repr(score.recall),
        "matched": str(score.matched),
        "n_predicted": str(score.n_predicted),
        "n_truth": str(score.n_truth),
    }
    cp["confusion"] = {str(k) if k is not None else "None": str(v) for k, v in sorted(score.confusion.items(), key=str)}
    if args.output:
        with open(args.output, "w") as fh:
            cp.write(fh)
    cp.write(sys.stdout)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tripends", description="Freight trip ends from heavy-truck GPS trajectories.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def stage(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="run configuration file")
        s.add_argument("--workers", type=int, help="worker processes (overrides [run] workers)")
        s.set_defaults(func=fn)
        return s

    stage("ingest", cmd_ingest, "parse and clean GPS records")
    stage("calibrate", cmd_calibrate, "detect speed, dwell and POI-radius thresholds")
    stage("extract", cmd_extract, "detect stops, select trip ends, chain trips")
    stage("stats", cmd_stats, "category shares, OD matrix, profiles and fits")

    s = sub.add_parser("synth", help="generate a labeled synthetic fleet")
    s.add_argument("--plan", help="fleet plan file (defaults when omitted)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="random seed (overrides the plan)")
    s.add_argument("--workers", type=int, help="worker processes")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", help="score predicted trip ends against ground truth")
    s.add_argument("--predictions", required=True, help="trip-ends (or stops) file")
    s.add_argument("--truth", required=True, help="truth file written by synth")
    s.add_argument("--match-radius", type=float, default=200.0, help="meters (default 200)")
    s.add_argument("--match-window", type=float, default=1800.0, help="seconds (default 1800)")
    s.add_argument("--output", help="also write the score to this file")
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        args.func(args)
    except InsufficientDataError as exc:
        log.error("insufficient data: %s", exc)
        return EXIT_INSUFFICIENT
    except (TripEndsError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FATAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
