"""Command-line entry points: grid, synth, expand, run, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model/protocol error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__, bench, classify, synth
from .grid import FeatureOptions, compute_grid, expand_dynamic, expand_static


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


DEFAULT_DISCRETE = synth.DiscreteTruth(
    support=((0.0,), (1.0,), (2.0,), (3.0,)),
    boundaries=(1.0, 2.0, 3.0),
    cdf_table=((0.10, 0.35, 0.60), (0.20, 0.45, 0.80),
               (0.30, 0.60, 0.85), (0.15, 0.50, 0.70)),
    censor_dist=(0.25, 0.0, 0.0),
)

DEFAULT_DYNAMIC = synth.DynamicTruth(
    boundaries=(1.0, 2.0, 3.0),
    state_probs=(0.5, 0.5),
    obs_times=(0.0, 0.75, 1.75),
    obs_values=(((1.0,), (1.5,), (2.0,)), ((4.0,), (3.5,), (3.0,))),
    hazard_table=((0.10, 0.25, 0.40), (0.25, 0.45, 0.55)),
    censor_dist=(0.25, 0.0, 0.0),
)

DEFAULT_WEIBULL = synth.WeibullTruth(coefficients=(0.8, -0.5, 0.3),
                                     shape=1.5, censor_rate=0.3)


def build_parser() -> _Parser:
    parser = _Parser(prog="survclass")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="compute quantile boundaries from a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--setting", choices=("static", "dynamic"), default="static")

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--kind", choices=("discrete", "weibull", "dynamic"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file overriding the built-in truth")

    p = sub.add_parser("expand", help="expand a dataset into classification rows")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--setting", choices=("static", "dynamic"), default="static")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--time-since", action="store_true",
                   help="include time since last observation (dynamic)")
    p.add_argument("--horizon-index", action="store_true",
                   help="include the horizon index (dynamic)")

    p = sub.add_parser("run", help="run a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the config output directory")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="aggregate results tables")
    p.add_argument("results", nargs="+", help="results.csv files from `run`")
    p.add_argument("--out", required=True)
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise bench.DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise bench.DataError(f"{path}: invalid JSON ({exc})") from exc


def _event_times(args):
    if args.setting == "static":
        rows, _ = bench.ingest_static(args.input)
    else:
        rows, _ = bench.ingest_dynamic(args.input)
    return [r.observed_time for r in rows if r.event], rows


def cmd_grid(args) -> int:
    times, _ = _event_times(args)
    if not times:
        raise bench.DataError("no event times")
    grid = compute_grid(times, args.k)
    print(json.dumps({"boundaries": list(grid.boundaries), "k": grid.k}))
    return 0


def cmd_synth(args) -> int:
    overrides = _load_json(args.config) if args.config else None
    if args.kind == "discrete":
        truth = DEFAULT_DISCRETE if overrides is None else synth.DiscreteTruth(
            support=tuple(tuple(r) for r in overrides["support"]),
            boundaries=tuple(overrides["boundaries"]),
            cdf_table=tuple(tuple(r) for r in overrides["cdf_table"]),
            censor_dist=tuple(overrides["censor_dist"]),
        )
        text = synth.static_csv(synth.gen_discrete(truth, args.n, args.seed))
    elif args.kind == "weibull":
        d = 3
        truth = DEFAULT_WEIBULL
        if overrides is not None:
            truth = synth.WeibullTruth(coefficients=tuple(overrides["coefficients"]),
                                       shape=overrides["shape"],
                                       censor_rate=overrides["censor_rate"])
            d = overrides.get("d", len(truth.coefficients))
        text = synth.static_csv(synth.gen_weibull(truth, args.n, d, args.seed))
    else:
        truth = DEFAULT_DYNAMIC if overrides is None else synth.DynamicTruth(
            boundaries=tuple(overrides["boundaries"]),
            state_probs=tuple(overrides["state_probs"]),
            obs_times=tuple(overrides["obs_times"]),
            obs_values=tuple(tuple(tuple(v) for v in vals)
                             for vals in overrides["obs_values"]),
            hazard_table=tuple(tuple(r) for r in overrides["hazard_table"]),
            censor_dist=tuple(overrides["censor_dist"]),
        )
        text = synth.dynamic_csv(synth.gen_dynamic(truth, args.n, args.seed))
    with open(args.out, "w", newline="") as fh:
        fh.write(text)
    return 0


def cmd_expand(args) -> int:
    times, rows = _event_times(args)
    if not times:
        raise bench.DataError("no event times")
    grid = compute_grid(times, args.k)
    schema = bench.ingest_static(args.input)[1] if args.setting == "static" \
        else bench.ingest_dynamic(args.input)[1]
    transformer = bench.Preprocessor(schema).fit(
        [r.values for r in rows] if args.setting == "static"
        else [obs for r in rows for _, obs in r.observations])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if args.setting == "static":
        records = bench._static_records(transformer, rows)
        examples = expand_static(records, grid)
        width = len(records[0].covariates)
        writer.writerow(["subject_index", "boundary_index", "boundary_time"]
                        + [f"f{j}" for j in range(width)] + ["label"])
        for ex in examples:
            writer.writerow([ex.subject_index, ex.boundary_index, repr(ex.boundary_time)]
                            + [repr(float(v)) for v in ex.covariates] + [ex.label])
    else:
        records = bench._dynamic_records(transformer, rows)
        options = FeatureOptions(args.time_since, args.horizon_index)
        examples = expand_dynamic(records, grid, options)
        width = len(examples[0].features) if examples else 0
        writer.writerow(["subject_index", "origin_index", "horizon_index"]
                        + [f"f{j}" for j in range(width)] + ["label"])
        for ex in examples:
            writer.writerow([ex.subject_index, ex.origin_index, ex.horizon_index]
                            + [repr(float(v)) for v in ex.features] + [ex.label])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_run(args) -> int:
    config = bench.ExperimentConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config = bench.ExperimentConfig.from_dict(
            {**json.loads(config.canonical_json()), "seed": args.seed})
    if args.out is not None:
        config = bench.ExperimentConfig.from_dict(
            {**json.loads(config.canonical_json()), "out_dir": args.out})
    started = time.time()
    table = bench.run_experiment(config, jobs=args.jobs)
    os.makedirs(config.out_dir, exist_ok=True)
    results_path = os.path.join(config.out_dir, "results.csv")
    with open(results_path, "w", newline="") as fh:
        fh.write(table.to_csv())
    manifest = {
        "config_hash": config.config_hash(),
        "config": json.loads(config.canonical_json()),
        "survclass_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "elapsed_seconds": round(time.time() - started, 3),
        "cells": len(table.cells),
    }
    with open(os.path.join(config.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(results_path)
    return 0


def cmd_report(args) -> int:
    tables = []
    for path in args.results:
        try:
            with open(path) as fh:
                tables.append(bench.ResultsTable.from_csv(fh.read()))
        except OSError as exc:
            raise bench.DataError(f"cannot read {path}: {exc}") from exc
    paths = bench.report(tables, args.out)
    for p in sorted(paths.values()):
        print(p)
    return 0


COMMANDS = {
    "grid": cmd_grid,
    "synth": cmd_synth,
    "expand": cmd_expand,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except bench.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (bench.ModelError, classify.ProtocolError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
