"""Command-line entry point.

Commands: validate, run, aggregate, calibrate, report-data.  Every flag has a
config-file equivalent; a flag beats the file, the file beats the built-in
default.  Errors exit nonzero with a single machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from capire import calibration, experiment
from capire.config import default_cfg_path, load_inputs, load_settings


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capire",
        description="Curriculum cohort simulation and experiment harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None,
                       help="config file (default: packaged capire.cfg)")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("validate", help="check all input files and print graph stats")
    add_common(p)

    p = sub.add_parser("run", help="simulate cohorts and write record files")
    add_common(p)
    p.add_argument("--scenarios", default=None,
                   help="comma-separated scenario ids, or 'all'")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--n-students", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", default=None)
    p.add_argument("--no-compress", action="store_true",
                   help="write plain .csv record files")
    p.add_argument("--params", default=None,
                   help="calibrated parameter overrides (parameter,value CSV)")
    p.add_argument("--aggregate", action="store_true",
                   help="also write aggregate tables after the run")

    p = sub.add_parser("aggregate", help="aggregate an existing records directory")
    p.add_argument("--in", dest="records_dir", required=True)
    p.add_argument("--out", dest="out", required=True)

    p = sub.add_parser("calibrate", help="search parameters against the targets")
    add_common(p)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("report-data", help="emit tidy CSVs for the report renderer")
    p.add_argument("--in", dest="records_dir", required=True)
    p.add_argument("--out", dest="out", required=True)
    return parser


def _settings(args, extra=None):
    overrides = dict(extra or {})
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    cfg = args.config if getattr(args, "config", None) else default_cfg_path()
    return load_settings(cfg, overrides)


def _cmd_validate(args) -> int:
    settings = _settings(args)
    inputs = load_inputs(settings)
    graph = inputs.base_graph
    print(f"courses={graph.n_courses} edges={graph.n_edges} acyclic=yes")
    print(f"redesigned_edges={inputs.a1_graph.n_edges}")
    print("bottleneck=" + ",".join(sorted(graph.bottleneck)))
    print(f"archetypes={len(inputs.archetypes)} "
          f"scenarios={len(settings.scenarios)}")
    return 0


def _cmd_run(args) -> int:
    overrides = {}
    if args.scenarios is not None:
        overrides["scenarios"] = args.scenarios
    if args.replications is not None:
        overrides["n_replications"] = str(args.replications)
    if args.n_students is not None:
        overrides["n_students"] = str(args.n_students)
    if args.seed is not None:
        overrides["master_seed"] = str(args.seed)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.no_compress:
        overrides["compress"] = "0"
    if args.params is not None:
        overrides["param_overrides"] = os.path.abspath(args.params)
    settings = _settings(args, overrides)
    inputs = load_inputs(settings)
    manifest = experiment.run_experiment(settings, inputs)
    print(f"manifest={manifest}")
    if args.aggregate:
        agg = experiment.aggregate_records(os.path.join(settings.out_dir, "records"))
        for name, path in sorted(experiment.write_tables(agg, settings.out_dir).items()):
            print(f"table={path}")
    return 0


def _cmd_aggregate(args) -> int:
    agg = experiment.aggregate_records(args.records_dir)
    for name, path in sorted(experiment.write_tables(agg, args.out).items()):
        print(f"table={path}")
    return 0


def _cmd_calibrate(args) -> int:
    settings = _settings(args)
    if args.budget is not None:
        settings = _settings(args, {"calibration_budget": str(args.budget)})
    inputs = load_inputs(settings)
    result = calibration.calibrate(settings, inputs, seed=args.seed)
    paths = calibration.write_outputs(result, settings.out_dir)
    print(f"score={result.score!r} evaluations={len(result.trace)}")
    for name in sorted(result.params):
        print(f"param {name}={result.params[name]!r}")
    for name, path in sorted(paths.items()):
        print(f"output={path}")
    return 0


def _cmd_report_data(args) -> int:
    agg = experiment.aggregate_records(args.records_dir)
    for name, path in sorted(experiment.write_report_data(agg, args.out).items()):
        print(f"output={path}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "run": _cmd_run,
    "aggregate": _cmd_aggregate,
    "calibrate": _cmd_calibrate,
    "report-data": _cmd_report_data,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
