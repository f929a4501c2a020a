"""
Command-line interface for rkhselect.

Subcommands:
- simulate: draw trajectories and responses from a benchmark process and model to CSV
- select: estimate, select impact points and estimate p̂ on a CSV dataset
- predict: apply a saved selection report to new trajectories
- benchmark: run replication experiments from a JSON config

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical or experiment failure.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from rkhselect import __version__
from rkhselect.bench import (
    ExperimentError,
    derive_seeds,
    export_table_csv,
    load_configs,
    read_selection_report,
    run_experiment,
    select_on_dataset,
    with_overrides,
    write_report,
    write_reports,
    write_selection_report,
)
from rkhselect.data import DataError, Dataset, Grid, load_dataset_csv, write_dataset_csv
from rkhselect.linalg import NumericalError
from rkhselect.order import ORDER_METHODS
from rkhselect.processes import (
    ProcessKind,
    ProcessSpec,
    RegressionModelSpec,
    gen_response,
    sample_paths,
)
from rkhselect.regressor import predict, rmse
from rkhselect.selector import SelectionConstraints

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    """Invalid flag combination detected after parsing."""


class UsageArgumentParser(argparse.ArgumentParser):
    """ArgumentParser exiting with status 1 on usage errors."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.process == ProcessKind.FBM.value:
        if args.hurst is None:
            raise _UsageError("--hurst is required for --process fbm")
        process = ProcessSpec.fractional(args.hurst)
    elif args.process == ProcessKind.OU.value:
        process = ProcessSpec.ornstein_uhlenbeck(*args.ou)
    else:
        process = ProcessSpec(args.process)

    model = RegressionModelSpec.preset(args.model, args.sigma, args.variant)
    grid = Grid.equispaced(args.grid)
    path_seed, noise_seed, _ = derive_seeds(args.seed)

    paths = sample_paths(process, grid, args.n, path_seed)
    responses = gen_response(model, paths, grid, noise_seed)
    write_dataset_csv(Dataset(grid, paths, responses), args.out)
    print(f"Wrote {args.n} {process.label} trajectories on {args.grid} points to {args.out}")
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    dataset = load_dataset_csv(args.input)
    constraints = SelectionConstraints(
        delta=args.delta, max_p=args.max_p, denom_tol=args.denom_tol
    )
    report = select_on_dataset(dataset, constraints, args.order, args.rho)

    write_selection_report(report, args.out)
    times = ", ".join(f"{t:.4g}" for t in report.selected_times)
    print(f"p_hat = {report.p_hat}; selected times: [{times}]")
    for note in report.warnings:
        print(f"Warning: {note}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    report = read_selection_report(args.model)
    dataset = load_dataset_csv(args.input)
    if report.grid_times and not (
        len(report.grid_times) == len(dataset.grid)
        and np.allclose(report.grid_times, dataset.grid.times, rtol=0.0, atol=1e-9)
    ):
        raise DataError("Grid mismatch between the selection report and the input", args.input)

    predicted = predict(report.predictor(), dataset.trajectories)
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["Y_hat"])
        writer.writerows([repr(float(y))] for y in predicted)

    if np.any(dataset.responses != 0):
        print(f"Relative squared error: {rmse(predicted, dataset.responses):.6g}")
    print(f"Wrote {predicted.size} predictions to {args.out}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    configs = [with_overrides(c, reps=args.reps) for c in load_configs(args.config)]
    reports = []
    for config in configs:
        LOGGER.info("Running %s with %d replications", config.label, config.reps)
        report = run_experiment(config, jobs=args.jobs)
        reports.append(report)
        summary = report.aggregates.get("rmse")
        if summary:
            print(f"{config.label}: rmse {summary['mean']:.4g} ({summary['sd']:.3g}), "
                  f"{report.failed_reps} failed")

    if len(reports) == 1:
        write_report(reports[0], args.out)
    else:
        write_reports(reports, args.out)
    table = args.table or Path(args.out).with_suffix(".csv")
    export_table_csv(reports, table, args.scale)
    print(f"Wrote {args.out} and {table}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = UsageArgumentParser(
        prog="rkhselect",
        description="Impact point selection for functional linear regression",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s simulate --process bm --n 150 --grid 100 --model 1 --seed 7 --out data.csv
  %(prog)s select --input data.csv --out selection.json
  %(prog)s predict --model selection.json --input new.csv --out predictions.csv
  %(prog)s benchmark --config table.json --jobs 4 --out results.json
""",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Log progress (-v) or every selection step (-vv)")
    parser.add_argument("--version", action="version", version=f"rkhselect {__version__}")
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=UsageArgumentParser)

    sim = commands.add_parser("simulate", help="Simulate a benchmark dataset")
    sim.add_argument("--process", required=True, choices=[k.value for k in ProcessKind])
    sim.add_argument("--hurst", type=float, help="Hurst exponent (fbm only)")
    sim.add_argument("--ou", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                     metavar=("THETA", "MU", "SIGMA"), help="OU parameters (ou only)")
    sim.add_argument("--n", type=int, default=150, help="Number of trajectories")
    sim.add_argument("--grid", type=int, default=100, help="Equispaced grid size m")
    sim.add_argument("--model", type=int, choices=(1, 2, 3), default=1)
    sim.add_argument("--variant", choices=("display", "text"), default="display",
                     help="Model 2 point set")
    sim.add_argument("--sigma", type=float, default=0.2, help="Noise standard deviation")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(handler=cmd_simulate)

    sel = commands.add_parser("select", help="Select impact points on a dataset")
    sel.add_argument("--input", required=True)
    sel.add_argument("--max-p", type=int, default=10)
    sel.add_argument("--delta", type=float, help="Minimum separation (default: grid step)")
    sel.add_argument("--order", choices=ORDER_METHODS, default="kmeans")
    sel.add_argument("--rho", type=float, default=0.01)
    sel.add_argument("--denom-tol", type=float)
    sel.add_argument("--out", required=True, help="Selection report (JSON)")
    sel.set_defaults(handler=cmd_select)

    pred = commands.add_parser("predict", help="Predict responses with a selection report")
    pred.add_argument("--model", required=True, help="Selection report written by select")
    pred.add_argument("--input", required=True)
    pred.add_argument("--out", required=True)
    pred.set_defaults(handler=cmd_predict)

    bench = commands.add_parser("benchmark", help="Run replication experiments")
    bench.add_argument("--config", required=True)
    bench.add_argument("--reps", type=int, help="Override the configured replication count")
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--out", required=True, help="JSON report")
    bench.add_argument("--table", help="CSV table (default: next to --out)")
    bench.add_argument("--scale", type=float, help="Divide RMSE cells by this factor")
    bench.set_defaults(handler=cmd_benchmark)

    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        return args.handler(args)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"rkhselect: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, KeyError, TypeError) as e:
        print(f"Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ExperimentError) as e:
        print(f"Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
