"""Command-line front end: single runs, parameter sweeps, the built-in
verification suite, and the machine-readable output schema.

Exit codes: 0 success, 1 verification failure, 2 bad config or arguments,
3 runtime contract violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import verify as verify_mod
from .pricing import STRATEGIES
from .scheduler import ContractViolation
from .simulation import (
    METRICS_COLUMNS,
    SCHEMA_VERSION,
    SWEEP_AXES,
    ConfigError,
    RunResult,
    load_scenario,
    result_row,
    run,
    scenario_to_dict,
    sweep,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _apply_seed_override(scenario):
    env = os.environ.get("DDPS_SEED")
    if env is None:
        return scenario
    try:
        seed = int(env)
    except ValueError:
        raise ConfigError(f"DDPS_SEED must be an integer, got {env!r}") from None
    return dataclasses.replace(scenario, seed=seed)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(METRICS_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _write_outputs(out_dir: Path, rows: list[dict], result: RunResult | None, trace: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "metrics.csv", rows)
    (out_dir / "metrics.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    if trace and result is not None:
        with (out_dir / "events.jsonl").open("w") as fh:
            for event in result.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        with (out_dir / "per_slot.csv").open("w", newline="") as fh:
            if result.per_slot:
                writer = csv.DictWriter(fh, fieldnames=list(result.per_slot[0].keys()))
                writer.writeheader()
                for row in result.per_slot:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v
                                     for k, v in row.items()})


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _apply_seed_override(load_scenario(args.config))
    result = run(scenario, trace=args.trace)
    _write_outputs(Path(args.out), [result_row(result)], result, args.trace)
    return EXIT_OK


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _apply_seed_override(load_scenario(args.config))
    doc = json.loads(Path(args.config).read_text())
    grid = doc.get("sweep", {})
    axis = args.axis or grid.get("axis")
    values = [float(v) for v in (_csv_list(args.values) if args.values else grid.get("values", []))]
    strategies = _csv_list(args.strategies) if args.strategies else grid.get(
        "strategies", list(STRATEGIES)
    )
    seeds = [int(s) for s in _csv_list(args.seeds)] if args.seeds else grid.get("seeds")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}; got {axis!r}")
    for st in strategies:
        if st not in STRATEGIES:
            raise ConfigError(f"unknown strategy {st!r}; valid: {', '.join(STRATEGIES)}")
    rows = sweep(scenario, axis, values, strategies, seeds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "metrics.csv", rows)
    (out_dir / "metrics.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    fault = args.inject_fault
    failed: str | None = None
    for name, ok, detail in verify_mod.run_checks(fault):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failed = name
            break
    if failed is not None:
        print(f"verification failed at: {failed}")
        return EXIT_VERIFY_FAILED
    print("all checks passed")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    from .simulation import Scenario

    doc = {
        "schema_version": SCHEMA_VERSION,
        "metrics_csv_columns": list(METRICS_COLUMNS),
        "scenario": scenario_to_dict(Scenario()),
        "sweep_axes": list(SWEEP_AXES),
        "strategies": list(STRATEGIES),
        "event_fields": ["slot", "user_id", "event", "F_i", "q_i", "payment", "reason"],
        "exit_codes": {"ok": 0, "verify_failed": 1, "config_error": 2, "runtime_error": 3},
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddps",
        description="Edge-offloading pricing simulator: runs, sweeps and verification.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute one scenario")
    p_run.add_argument("--config", required=True, help="scenario JSON path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--trace", action="store_true", help="also write events.jsonl and per_slot.csv")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="cross product of axis values and strategies")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--axis", choices=SWEEP_AXES)
    p_sweep.add_argument("--values", help="comma-separated axis values")
    p_sweep.add_argument("--strategies", help="comma-separated strategy names")
    p_sweep.add_argument("--seeds", help="comma-separated seeds; one run per seed per cell")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the invariant and trend checks")
    p_verify.add_argument(
        "--inject-fault", choices=verify_mod.FAULTS, default=None,
        help="corrupt one known quantity to prove the checks have teeth",
    )
    p_verify.set_defaults(fn=cmd_verify)

    p_schema = sub.add_parser("schema", help="print the machine-readable output schema")
    p_schema.set_defaults(fn=cmd_schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractViolation, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
