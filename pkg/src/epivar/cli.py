"""``epivar`` command line.

Subcommands: ``estimate``, ``ground-truth``, ``table`` and ``selfcheck``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 partial grid failure (``table`` only).
"""
import argparse
import json
import sys

from . import __version__
from .config import RunConfig, load_config
from .exceptions import (
    ConfigError,
    EpivarError,
    IllConditionedError,
    RunError,
    TrainingDivergedError,
)
from .runner import RESULT_COLUMNS, TABLE_COLUMNS, run_estimate, run_ground_truth, run_table
from .selfcheck import run_selfcheck

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3
NUMERIC_ERRORS = (IllConditionedError, TrainingDivergedError, ArithmeticError)


def exit_code_for(exc):
    cause = exc.cause if isinstance(exc, RunError) else exc
    return EXIT_NUMERIC if isinstance(cause, NUMERIC_ERRORS) else EXIT_CONFIG


def _build_parser():
    parser = argparse.ArgumentParser(prog="epivar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    common.add_argument("--out-dir", help="directory for result files")
    common.add_argument("--workers", type=int, help="worker processes (default: $EPIVAR_WORKERS or 1)")
    common.add_argument("--format", choices=("csv", "json"), help="format of the results echoed to stdout")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set oracle.j=30 (repeatable)")

    sub.add_parser("estimate", parents=[common], help="run the IF/EV/BA estimators")
    sub.add_parser("ground-truth", parents=[common], help="retraining ground truth (synthetic data only)")
    sub.add_parser("table", parents=[common], help="sweep the (dim, n) grid with estimates and ground truth")
    sub.add_parser("selfcheck", help="run the fast invariant suite")
    return parser


def _config_from_args(args):
    data = load_config(args.config, args.set)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out_dir is not None:
        data.setdefault("output", {})["out_dir"] = args.out_dir
    if args.workers is not None:
        data["workers"] = args.workers
    if args.format is not None:
        data.setdefault("output", {})["format"] = args.format
    return RunConfig(data)


def _echo(records, columns, fmt, stream):
    if fmt == "json":
        json.dump(records, stream, indent=2, default=str)
        stream.write("\n")
        return
    stream.write(",".join(columns) + "\n")
    for rec in records:
        stream.write(",".join(_cell(rec.get(c)) for c in columns) + "\n")


def _cell(value):
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _build_parser().parse_args(argv)
    if args.command == "selfcheck":
        ok = run_selfcheck(lambda line: print(line, file=stdout))
        return EXIT_OK if ok else EXIT_NUMERIC
    try:
        config = _config_from_args(args)
        fmt = config.data["output"]["format"]
        if args.command == "table":
            table, summary = run_table(config)
            _echo(table, TABLE_COLUMNS, fmt, stdout)
            if summary["failed"]:
                for cell in summary["cells"]:
                    if cell["status"] != "ok":
                        print(f"cell dim={cell['dim']} n={cell['n']} failed: {cell['error']}", file=stderr)
                return EXIT_PARTIAL
            return EXIT_OK
        run = run_estimate if args.command == "estimate" else run_ground_truth
        rows = run(config)
        columns = RESULT_COLUMNS + ("wall_seconds",)
        _echo([{c: getattr(r, c) for c in columns} for r in rows], columns, fmt, stdout)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except EpivarError as exc:
        print(f"error: {exc}", file=stderr)
        return exit_code_for(exc)


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
