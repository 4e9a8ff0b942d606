"""Command-line driver.

Subcommands:

  run      one config, one trace per seed
  sweep    one run per grid point and seed, plus a summary CSV
  compare  baseline vs tuned traces from exported sidecars
  trends   medians and monotonicity of a sweep summary
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, FLTuneError
from .experiment import (
    ExperimentConfig,
    compare_runs,
    export_trace,
    grid_e,
    grid_m,
    grid_preferences,
    load_config,
    load_trace_summary,
    median_by,
    monotone_ok,
    output_dir,
    reference_config,
    run_experiment,
    sweep,
)
from .tuner import Preference, preference_grid

log = logging.getLogger("fltune")

# Expected direction of each overhead along each swept axis (True = grows).
TREND_DIRECTIONS = {
    "M": {"q": False, "z": True, "v": True},
    "E": {"q": False, "t": True, "z": True},
}


def _pref(text: str) -> Preference:
    try:
        return Preference.parse([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _numbers(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else reference_config()
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seeds"] = tuple(args.seed)
    if args.target is not None:
        overrides["target_accuracy"] = args.target
    if args.pref is not None:
        overrides["preference"] = args.pref
    if args.M is not None:
        overrides["M"] = args.M
    if args.E is not None:
        overrides["E"] = args.E
    if args.aggregator is not None:
        overrides["aggregator"] = args.aggregator
    if args.round_cap is not None:
        overrides["round_cap"] = args.round_cap
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    out = output_dir(cfg, args.out)
    for seed in cfg.seeds:
        trace = run_experiment(cfg, seed)
        csv_path, _ = export_trace(trace, out / trace.name)
        led = trace.ledger
        final = trace.final_hyper
        print(
            f"{trace.name}: rounds={trace.rounds_used} reached={trace.reached_target} "
            f"final=(M={final.M}, E={final.E:g}) t={led.t:.6g} q={led.q:.6g} z={led.z:.6g} v={led.v:.6g} -> {csv_path}"
        )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    if args.axis == "M":
        grid = grid_m([int(v) for v in args.values or (1, 5, 10, 20)])
    elif args.axis == "E":
        grid = grid_e(args.values or (0.5, 1, 2, 4, 8))
    else:
        grid = grid_preferences(preference_grid())
    out = output_dir(cfg, args.out)
    result = sweep(cfg, grid)
    for trace in result.traces:
        export_trace(trace, out / trace.name)
    if args.axis == "pref":
        # The fixed-mode baseline row the comparison needs.
        base = sweep(replace(cfg, mode="fixed"), [{"mode": "fixed"}])
        for trace in base.traces:
            export_trace(trace, out / trace.name)
        result.rows.extend(base.rows)
        result.failures.extend(base.failures)
    summary = out / f"summary_{args.axis}.csv"
    keys: list[str] = []
    for row in result.rows:
        keys.extend(k for k in row if k not in keys)
    with open(summary, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(result.rows)
    print(f"{len(result.rows)} runs, {len(result.failures)} failures -> {summary}")
    for point, err in result.failures:
        print(f"failed: {point}: {err}", file=sys.stderr)
    return 1 if result.failures else 0


def _sidecars(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(path.glob("*.json"))
    return [path]


def cmd_compare(args: argparse.Namespace) -> int:
    baseline = [load_trace_summary(p) for p in _sidecars(Path(args.baseline))]
    tuned = [load_trace_summary(p) for p in _sidecars(Path(args.tuned))]
    if not baseline or not tuned:
        raise ConfigError("no trace sidecars found", "compare")
    baseline = [b for b in baseline if b.mode == "fixed"]
    tuned = [t for t in tuned if t.mode == "fedtune"]
    prefs = [args.pref] if args.pref else sorted({t.preference for t in tuned}, key=lambda p: p.weights, reverse=True)
    rows = []
    for pref in prefs:
        report = compare_runs(baseline, [t for t in tuned if t.preference == pref], pref)
        rows.append(
            {
                "preference": pref.label(),
                "mean": report.mean,
                "std": report.std,
                "runs": len(report.improvements),
                "excluded": report.excluded,
            }
        )
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for r in rows:
            print(f"{r['preference']:>32}  {r['mean']:+8.2f}%  ({r['std']:.2f})  n={r['runs']} excluded={r['excluded']}")
    return 0


def cmd_trends(args: argparse.Namespace) -> int:
    with open(args.summary, newline="") as fh:
        rows = list(csv.DictReader(fh))
    axis = args.axis
    if not rows or axis not in rows[0]:
        raise ConfigError(f"summary has no {axis!r} column", "summary")
    for row in rows:
        row[axis] = float(row[axis])
        for m in "tqzv":
            row[m] = float(row[m])
    ok_all = True
    for metric, increasing in TREND_DIRECTIONS[axis].items():
        med = median_by(rows, axis, metric)
        keys = sorted(med)
        values = [med[k] for k in keys]
        ok = monotone_ok(values, increasing)
        ok_all &= ok
        arrow = "non-decreasing" if increasing else "non-increasing"
        cells = ", ".join(f"{k:g}:{v:.6g}" for k, v in zip(keys, values))
        print(f"{metric} {arrow} in {axis}: {'ok' if ok else 'VIOLATED'}  [{cells}]")
    return 0 if ok_all or not args.strict else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fltune", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML config; defaults to the built-in reference task")
        p.add_argument("--mode", choices=("fixed", "fedtune"))
        p.add_argument("--seed", type=int, action="append", help="repeatable; replaces the config's seed list")
        p.add_argument("--target", type=float, help="target test accuracy")
        p.add_argument("--pref", type=_pref, help="preference weights a,b,c,d")
        p.add_argument("--M", type=int, help="initial number of participants")
        p.add_argument("--E", type=float, help="initial number of training passes")
        p.add_argument("--aggregator", choices=("fedavg", "fednova", "fedadagrad"))
        p.add_argument("--round-cap", type=int)
        p.add_argument("--out", help="output directory (beats FLTUNE_OUTPUT_DIR and the config)")

    p = sub.add_parser("run", help="run one config")
    add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid over M, E, or the 15 preferences")
    add_config_flags(p)
    p.add_argument("--axis", choices=("M", "E", "pref"), required=True)
    p.add_argument("--values", type=_numbers, help="comma-separated grid values for M or E")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="baseline vs tuned improvement from exported traces")
    p.add_argument("baseline", help="directory or .json sidecar of fixed-mode traces")
    p.add_argument("tuned", help="directory or .json sidecar of fedtune traces")
    p.add_argument("--pref", type=_pref, help="only this preference (default: every preference found)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trends", help="check overhead trends in a sweep summary")
    p.add_argument("summary", help="summary CSV written by 'sweep'")
    p.add_argument("--axis", choices=("M", "E"), required=True)
    p.add_argument("--strict", action="store_true", help="exit 3 when a trend is violated")
    p.set_defaults(func=cmd_trends)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FLTuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
