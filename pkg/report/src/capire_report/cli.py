"""Command-line entry point: render figures and tables from report-data CSVs."""

from __future__ import annotations

import argparse
import sys

from capire_report.report import render_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="capire-report",
        description="Render figures and markdown tables from report-data CSVs.")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory with the report-data CSVs")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="output directory for PNGs and markdown")
    args = parser.parse_args(argv)
    try:
        for name, path in sorted(render_all(args.in_dir, args.out_dir).items()):
            print(f"output={path}")
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
