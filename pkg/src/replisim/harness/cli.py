"""Command-line entry point: ``replisim run|incident|cleanup|sweep-crash-points``."""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from ..domain import SECOND
from .config import ConfigInvalid, ScenarioConfig
from .incidents import INCIDENTS, UnknownScenario, incident_scenario
from .runtime import RunResult, Simulation, check_assertions, sweep_crash_points


def _emit(result: RunResult, args) -> None:
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            fh.write(result.metric_stream)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(result.summary_csv())
    print(json.dumps(result.summary, indent=2, default=str))
    _report(result.failures, len(args.assertion_count))


def _report(failures: list[str], total: int) -> None:
    for f in failures:
        print(f"ASSERTION FAILED: {f}", file=sys.stderr)
    if total:
        print(f"assertions: {total - len(failures)}/{total} passed", file=sys.stderr)


def _run_config(cfg: ScenarioConfig, args) -> int:
    args.assertion_count = cfg.assertions
    result = Simulation(cfg, backup_dir=getattr(args, "backup_dir", None)).run()
    _emit(result, args)
    return 0 if result.passed else 1


def cmd_run(args) -> int:
    return _run_config(ScenarioConfig.load(args.config), args)


def cmd_incident(args) -> int:
    cfg = incident_scenario(args.name, fixed=args.fixed)
    if args.print_config:
        sys.stdout.write(cfg.to_yaml())
        return 0
    return _run_config(cfg, args)


def cmd_cleanup(args) -> int:
    cfg = (ScenarioConfig.load(args.config) if args.config
           else incident_scenario("queue-pollution"))
    sim = Simulation(cfg, backup_dir=args.backup_dir).build()
    sim.clock.run(until=int(args.at_s * SECOND))
    report = sim.run_cleanup()
    if report is None:
        print(json.dumps(sim.cleanup_reports[-1]), file=sys.stderr)
        return 1
    report["backup_path"] = sim.cleanup_backups[-1]
    print(json.dumps(report, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    sweep = sweep_crash_points(cfg)
    for point, dups in sweep.duplicates_by_crash_point.items():
        print(f"crash after event {point}: duplicates={dups}")
    summary = {"baseline_events": sweep.baseline_events,
               "crash_points": len(sweep.duplicates_by_crash_point),
               "duplicates": sweep.max_duplicates,
               "points_with_duplicates": len(sweep.points_with_duplicates)}
    print(json.dumps(summary))
    failures = check_assertions(summary, cfg.assertions)
    _report(failures, len(cfg.assertions))
    return 0 if not failures else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replisim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def outputs(p):
        p.add_argument("--metrics", help="write the line-delimited metric stream here")
        p.add_argument("--csv", help="write the summary as CSV here")
        p.add_argument("--backup-dir", help="directory for cleanup backups")

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("config")
    outputs(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("incident", help="run a calibrated incident scenario")
    p.add_argument("name", choices=INCIDENTS)
    p.add_argument("--fixed", action="store_true", help="run the countermeasure variant")
    p.add_argument("--print-config", action="store_true", help="print the YAML and exit")
    outputs(p)
    p.set_defaults(func=cmd_incident)

    p = sub.add_parser("cleanup", help="categorize queued videos, back up, delete/mark")
    p.add_argument("config", nargs="?", help="scenario whose store to clean (default: queue-pollution)")
    p.add_argument("--backup-dir", default="backups")
    p.add_argument("--at-s", type=float, default=0.0, help="virtual time at which to clean")
    p.set_defaults(func=cmd_cleanup)

    p = sub.add_parser("sweep-crash-points", help="crash after every event boundary")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except (UnknownScenario, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
