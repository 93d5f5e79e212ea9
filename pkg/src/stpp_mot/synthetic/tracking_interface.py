"""Classes for filtering detections, tracking and scoring a run."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from stpp_mot.detections import parse_mot_csv, write_mot_csv
from stpp_mot.filtering import FilterReport, filter_detections
from stpp_mot.metrics import (
    MotReport,
    clear_mot,
    clear_mot_many,
    event_ap,
    prior_ap,
    write_json,
)
from stpp_mot.point_process import read_event_grids
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.base_interface import BaseStageInterface
from stpp_mot.synthetic.model_interface import read_intensities
from stpp_mot.tracker import track, trajectories_from_detections

REPORT_SCHEMA_VERSION = 1

LEDGER_COLUMNS = [
    "seed",
    "method",
    "mota",
    "median_mota",
    "motp",
    "mostly_tracked",
    "mostly_lost",
    "false_positives",
    "false_negatives",
    "id_switches",
    "event_ap",
]


def filter_file(
    detections_path, events_path, output_path, tau_r: float
) -> FilterReport:
    """Filter one MOT file with one event-grid file."""
    detections = parse_mot_csv(detections_path)
    grids = read_event_grids(events_path)
    kept, report = filter_detections(detections, grids, tau_r)
    write_mot_csv(output_path, kept)
    return report


def track_file(detections_path, output_path, cfg) -> int:
    """Track one MOT file; return the number of trajectories written."""
    trajectories = track(parse_mot_csv(detections_path), cfg)
    write_mot_csv(
        output_path,
        [d for traj in trajectories for d in traj.to_detections()],
        with_extras=False,
    )
    return len(trajectories)


def read_sequence(gt_path, pred_path) -> Tuple[List, List]:
    """Ground-truth and predicted trajectories of two MOT files."""
    gt = trajectories_from_detections(parse_mot_csv(gt_path))
    pred = trajectories_from_detections(parse_mot_csv(pred_path))
    return gt, pred


def evaluate_files(gt_path, pred_path) -> MotReport:
    """CLEAR-MOT report of one predicted MOT file against ground truth."""
    return clear_mot(*read_sequence(gt_path, pred_path))


class FilterInterface(BaseStageInterface):
    """Class for removing detections covered by predicted events."""

    stage_name = "filter"

    def methods(self) -> List[Optional[str]]:
        return list(self.cfg.variants)

    def run(self, method: Optional[str] = None) -> None:
        paths = self.run_paths
        for seed in self.test_seeds:
            detections = self.require(
                get_run_paths.scenario_dir(paths, seed) / "detections.csv",
                "scenario detections",
                "simulate",
            )
            events = self.require(
                get_run_paths.predicted_events_path(paths, method, seed),
                f"{method} predicted events",
                "infer",
            )
            report = filter_file(
                detections,
                events,
                get_run_paths.filtered_path(paths, method, seed),
                self.cfg.filter.tau_r,
            )
            report.to_csv(
                get_run_paths.filter_report_path(paths, method, seed)
            )
            self.log(
                f"{method} seed {seed}: removed {report.n_removed} of "
                f"{len(report.detections)} detections"
            )


class TrackInterface(BaseStageInterface):
    """Class for tracking unfiltered and filtered detections."""

    stage_name = "track"

    def methods(self) -> List[Optional[str]]:
        return [get_run_paths.BASELINE, *self.cfg.variants]

    def run(self, method: Optional[str] = None) -> None:
        paths = self.run_paths
        for seed in self.test_seeds:
            if method == get_run_paths.BASELINE:
                source = self.require(
                    get_run_paths.scenario_dir(paths, seed)
                    / "detections.csv",
                    "scenario detections",
                    "simulate",
                )
            else:
                source = self.require(
                    get_run_paths.filtered_path(paths, method, seed),
                    f"{method} filtered detections",
                    "filter",
                )
            n_tracks = track_file(
                source,
                get_run_paths.tracks_path(paths, method, seed),
                self.cfg.tracker,
            )
            self.log(f"{method} seed {seed}: {n_tracks} trajectories")


class EvaluationInterface(BaseStageInterface):
    """Class for scoring every method and writing the run report.

    The report holds a pooled CLEAR-MOT report and per-scenario MOTA for
    each method, the event AP of each model variant and the AP of a
    constant intensity. Rows of the run are merged into the results ledger,
    replacing earlier rows of the same seed and method.
    """

    stage_name = "eval"

    def _score_method(self, method: str) -> Dict:
        paths = self.run_paths
        sequences = []
        for seed in self.test_seeds:
            gt_path = get_run_paths.scenario_dir(paths, seed) / "gt.csv"
            self.require(gt_path, "ground truth", "simulate")
            pred_path = self.require(
                get_run_paths.tracks_path(paths, method, seed),
                f"{method} tracks",
                "track",
            )
            sequences.append(read_sequence(gt_path, pred_path))
        reports, pooled = clear_mot_many(sequences)
        motas = [r.mota for r in reports]
        return dict(
            mot=pooled.to_dict(),
            median_mota=float(np.median(motas)),
            scenario_mota=motas,
        )

    def _event_ap(self, variant: str, labeled: Dict) -> Optional[float]:
        maps, grids = [], []
        for seed in self.test_seeds:
            path = self.require(
                get_run_paths.intensities_path(self.run_paths, variant, seed),
                f"{variant} intensities",
                "infer",
            )
            maps.extend(read_intensities(path))
            grids.extend(labeled[seed])
        if not any(g.count for g in grids):
            return None
        return event_ap(maps, grids)

    def build_report(self) -> Dict:
        labeled = {
            seed: self.load_scenario(seed)[1] for seed in self.test_seeds
        }
        all_grids = [g for seed in self.test_seeds for g in labeled[seed]]
        methods = {}
        for method in [get_run_paths.BASELINE, *self.cfg.variants]:
            methods[method] = self._score_method(method)
            if method != get_run_paths.BASELINE:
                methods[method]["event_ap"] = self._event_ap(method, labeled)
            logging.info(
                f"{method}: MOTA {methods[method]['mot']['mota']:.4f}, "
                f"median {methods[method]['median_mota']:.4f}"
            )
        has_events = any(g.count for g in all_grids)
        return dict(
            schema_version=REPORT_SCHEMA_VERSION,
            seed=self.cfg.seed,
            config=self.cfg.to_dict(),
            train_scenarios=self.train_seeds,
            test_scenarios=self.test_seeds,
            methods=methods,
            prior_ap=prior_ap(all_grids) if has_events else None,
        )

    def update_ledger(self, report: Dict) -> pd.DataFrame:
        rows = [
            dict(
                seed=report["seed"],
                method=method,
                median_mota=scores["median_mota"],
                event_ap=scores.get("event_ap"),
                **{
                    key: scores["mot"][key]
                    for key in LEDGER_COLUMNS
                    if key in scores["mot"]
                },
            )
            for method, scores in report["methods"].items()
        ]
        ledger = pd.DataFrame(rows, columns=LEDGER_COLUMNS)
        path = get_run_paths.ledger_path(self.run_paths)
        if path.exists():
            previous = pd.read_csv(path)
            keys = set(zip(ledger["seed"], ledger["method"]))
            stale = [
                (seed, method) in keys
                for seed, method in zip(previous["seed"], previous["method"])
            ]
            ledger = pd.concat(
                [previous[~np.array(stale, dtype=bool)], ledger],
                ignore_index=True,
            )
        ledger = ledger.sort_values(["seed", "method"], kind="stable")
        path.parent.mkdir(parents=True, exist_ok=True)
        ledger.to_csv(path, index=False, float_format="%.10g")
        return ledger

    def run(self, method: Optional[str] = None) -> None:
        report = self.build_report()
        path = get_run_paths.report_path(self.run_paths)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json(path, report)
        self.update_ledger(report)
        self.log(f"Wrote report to {path}")
