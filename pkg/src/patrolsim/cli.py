"""Command-line front end: run scenarios, replay logs, batch seeds, validate.

Exit codes: 0 success, 2 scenario validation failure, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .engine import ScenarioError, load_scenario_file, metrics_from_lines, read_replay, run, write_replay

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _load(path, seed=None, ticks=None):
    scenario = load_scenario_file(path)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    if ticks is not None:
        scenario = replace(scenario, duration=ticks)
    return scenario


def _cmd_run(args):
    scenario = _load(args.scenario, args.seed, args.ticks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines, metrics = run(scenario)
    write_replay(out / "replay.log", lines)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_replay(args):
    lines = read_replay(args.log)
    metrics = metrics_from_lines(lines)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return EXIT_OK


def _parse_seed_range(spec):
    lo, sep, hi = spec.partition("..")
    if not sep:
        return [int(lo)]
    return list(range(int(lo), int(hi) + 1))


def _cmd_batch(args):
    scenario_path = args.scenario
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in _parse_seed_range(args.seeds):
        scenario = _load(scenario_path, seed, args.ticks)
        lines, metrics = run(scenario)
        write_replay(out / f"replay_{seed}.log", lines)
        row = {"seed": seed, **metrics.to_dict()}
        rows.append(row)
        print(json.dumps(row, sort_keys=True))
    (out / "batch_metrics.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_validate(args):
    load_scenario_file(args.scenario)
    print("ok")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="patrolsim",
                                     description="Deterministic patrol-robot simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write replay + metrics")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ticks", type=int, default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("replay", help="recompute metrics from a replay log")
    p.add_argument("log")
    p.add_argument("--metrics", action="store_true", help="print metrics (default)")
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("batch", help="run a scenario across a seed range")
    p.add_argument("scenario")
    p.add_argument("--seeds", required=True, help="e.g. 0..19")
    p.add_argument("--out", required=True)
    p.add_argument("--ticks", type=int, default=None)
    p.set_defaults(fn=_cmd_batch)

    p = sub.add_parser("validate", help="check a scenario document")
    p.add_argument("scenario")
    p.set_defaults(fn=_cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
