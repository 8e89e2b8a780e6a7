"""Command-line entry: run sweeps, compare run records, export plot data.

Exit codes: 0 success, 1 validation failure, 2 partial failure (some cells
failed but the sweep completed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from biaslab import runner


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biaslab",
        description="Train and compare subgroup-debiasing strategies from a YAML config.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute every (seed, method) cell of a config")
    p_run.add_argument("config", help="path to the YAML run config")

    p_cmp = sub.add_parser("compare", help="merge run records into one CSV table")
    p_cmp.add_argument("records", nargs="+", help="record.json files or run directories")
    p_cmp.add_argument("--out", help="write the CSV here instead of stdout")
    p_cmp.add_argument("--no-std", action="store_true", help="omit std columns")

    p_plot = sub.add_parser("plot-data", help="emit JSON series for external plotting")
    p_plot.add_argument("record", help="record.json file or run directory")
    p_plot.add_argument("--kind", required=True,
                        help="one of: " + ", ".join(runner.PLOT_KINDS))
    p_plot.add_argument("--method", help="restrict to one method id")
    p_plot.add_argument("--seed", type=int, help="restrict to one seed")
    p_plot.add_argument("--out", help="write the JSON here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "run":
        return runner.run(args.config)

    if args.command == "compare":
        try:
            text = runner.compare(args.records, include_std=not args.no_std)
        except (ValueError, OSError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return runner.EXIT_VALIDATION
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return runner.EXIT_OK

    # plot-data
    try:
        doc = runner.emit_plot_data(args.record, args.kind, args.method, args.seed)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return runner.EXIT_VALIDATION
    text = json.dumps(doc, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    return runner.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
