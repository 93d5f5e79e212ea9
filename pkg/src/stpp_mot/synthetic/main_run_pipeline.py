"""Entrypoint to run the synthetic filtering and tracking experiments.

Every subcommand reads the artifacts of earlier stages from the run
directory (``out_dir`` of the configuration) and writes its own there:
    scenarios/      simulated scenarios with labeled events
    models/         one checkpoint and loss trace per variant
    intensities/    intensity maps of the held-out scenarios
    predicted_events/, filtered/, tracks/
    reports/        report.json and the results.csv ledger
    plot_data/      CSV series for figures

Usage:
    $ stpp-mot pipeline --out-dir runs/seed0
    $ stpp-mot train --variant syncasync --config my_config.yaml
    $ stpp-mot eval --gt gt.csv --pred tracks.csv

    ``filter``, ``track`` and ``eval`` also take explicit files, in which
    case the run directory is not read. Exit codes: 0 success, 2 invalid
    configuration, 3 missing or malformed data, 4 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from stpp_mot.config import RunConfig, load_run_config
from stpp_mot.errors import (
    DataError,
    NumericError,
    RejectedConfigError,
    RejectedInputError,
)
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.stage_runner import StageRunner
from stpp_mot.synthetic.tracking_interface import (
    evaluate_files,
    filter_file,
    track_file,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_SUBCOMMANDS = (
    "simulate",
    "train",
    "infer",
    "filter",
    "track",
    "eval",
    "pipeline",
    "plot-data",
)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file merged over defaults")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument(
        "--variant",
        help="restrict to one model variant: timeindep, sync or syncasync",
    )
    common.add_argument("--out-dir", help="run directory")

    parser = argparse.ArgumentParser(
        prog="stpp-mot",
        description="Filter bad detections with a learned point process "
        "and track the rest.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    parsers = {
        name: subparsers.add_parser(name, parents=[common])
        for name in _SUBCOMMANDS
    }
    parsers["filter"].add_argument("--detections", help="MOT file to filter")
    parsers["filter"].add_argument("--events", help="event grid file")
    parsers["filter"].add_argument("--output", help="filtered MOT file")
    parsers["track"].add_argument("--detections", help="MOT file to track")
    parsers["track"].add_argument("--output", help="trajectory MOT file")
    parsers["eval"].add_argument("--gt", help="ground-truth MOT file")
    parsers["eval"].add_argument("--pred", help="predicted MOT file")
    parsers["eval"].add_argument("--output", help="report JSON path")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """Command-line flags as a config mapping, applied last."""
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["training"] = dict(seed=args.seed)
    if args.variant is not None:
        overrides["variants"] = [args.variant]
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return overrides


def _require_together(args: argparse.Namespace, *names: str) -> bool:
    """True when all file flags are given, False when none are."""
    given = [getattr(args, name) is not None for name in names]
    if any(given) and not all(given):
        flags = ", ".join(f"--{name}" for name in names)
        raise RejectedConfigError(f"{args.subcommand} needs all of {flags}")
    return all(given)


def _run_files(args: argparse.Namespace, cfg: RunConfig) -> bool:
    """Run a subcommand on explicit files; False if none were given."""
    if args.subcommand == "filter" and _require_together(
        args, "detections", "events", "output"
    ):
        report = filter_file(
            args.detections, args.events, args.output, cfg.filter.tau_r
        )
        report.to_csv(Path(args.output).with_suffix(".report.csv"))
        return True
    if args.subcommand == "track" and _require_together(
        args, "detections", "output"
    ):
        track_file(args.detections, args.output, cfg.tracker)
        return True
    if args.subcommand == "eval" and _require_together(args, "gt", "pred"):
        report = evaluate_files(args.gt, args.pred)
        output = args.output
        if output is None:
            run_paths = get_run_paths.get_run_paths(cfg.out_dir)
            output = run_paths.reports / "eval.json"
        report.to_json(output)
        logging.info(f"MOTA = {report.mota:.4f}, report in {output}")
        return True
    return False


def run(args: argparse.Namespace) -> None:
    cfg = load_run_config(args.config, _overrides(args))
    logging.info(f"Run seed = {cfg.seed}, out_dir = {cfg.out_dir}")
    if _run_files(args, cfg):
        return
    runner = StageRunner(cfg)
    if args.subcommand == "pipeline":
        report_path = runner.run_pipeline()
        logging.info(f"Report written to {report_path}")
    else:
        runner.run_stage(args.subcommand)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    logging.basicConfig(format="%(levelname)s %(message)s")
    # Set logger level for info is displayed in console
    logging.getLogger().setLevel(logging.INFO)
    args = _build_parser().parse_args(argv)
    logging.info(f"Starting {args.subcommand}")
    try:
        run(args)
    except RejectedConfigError as e:
        logging.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (DataError, RejectedInputError) as e:
        logging.error(f"Data error: {e}")
        return EXIT_DATA
    except NumericError as e:
        logging.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    logging.info(f"Finished {args.subcommand}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
