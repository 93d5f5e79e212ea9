"""Function for getting paths to the artifacts of a run."""

import collections
import pathlib

RunPaths = collections.namedtuple(
    "RunPaths",
    [
        "output",
        "scenarios",
        "models",
        "intensities",
        "predicted_events",
        "filtered",
        "tracks",
        "reports",
        "plot_data",
    ],
)

BASELINE = "baseline"


def get_run_paths(out_dir):
    """Get paths to all stage outputs under ``out_dir``."""
    output = pathlib.Path(out_dir)
    return RunPaths(
        output=output,
        # One directory per scenario with detections, gt, frames, events
        scenarios=output / "scenarios",
        # <variant>.ckpt, <variant>.json and <variant>_trace.csv
        models=output / "models",
        intensities=output / "intensities",
        predicted_events=output / "predicted_events",
        filtered=output / "filtered",
        tracks=output / "tracks",
        reports=output / "reports",
        plot_data=output / "plot_data",
    )


def scenario_name(seed):
    return f"scenario_{seed:03d}"


def scenario_dir(run_paths, seed):
    return run_paths.scenarios / scenario_name(seed)


def model_path(run_paths, variant):
    """Checkpoint stem; the files are ``<stem>.ckpt`` and ``<stem>.json``."""
    return run_paths.models / variant


def trace_path(run_paths, variant):
    return run_paths.models / f"{variant}_trace.csv"


def intensities_path(run_paths, variant, seed):
    return run_paths.intensities / variant / f"{scenario_name(seed)}.tensor"


def predicted_events_path(run_paths, variant, seed):
    return (
        run_paths.predicted_events / variant / f"{scenario_name(seed)}.txt"
    )


def filtered_path(run_paths, variant, seed):
    return run_paths.filtered / variant / f"{scenario_name(seed)}.csv"


def filter_report_path(run_paths, variant, seed):
    return (
        run_paths.filtered / variant / f"{scenario_name(seed)}_report.csv"
    )


def tracks_path(run_paths, method, seed):
    return run_paths.tracks / method / f"{scenario_name(seed)}.csv"


def report_path(run_paths):
    return run_paths.reports / "report.json"


def ledger_path(run_paths):
    return run_paths.reports / "results.csv"
