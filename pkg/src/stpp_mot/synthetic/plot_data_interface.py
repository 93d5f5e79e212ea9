"""Class for writing the series behind the run figures."""

import json
from typing import Optional

import pandas as pd

from stpp_mot.metrics import precision_recall_curve
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.base_interface import BaseStageInterface
from stpp_mot.synthetic.model_interface import read_intensities
from stpp_mot.training import LossTrace

SMOOTHING_WINDOW = 50


class PlotDataInterface(BaseStageInterface):
    """Class for emitting CSV series for external plotting.

    Writes ``loss_<variant>.csv`` (objective, NLL and its smoothed
    objective per iteration), ``pr_<variant>.csv`` (event precision-recall
    curve over the held-out scenarios) and ``mota_bars.csv`` (pooled and
    median MOTA per method).
    """

    stage_name = "plot-data"

    def _write(self, frame: pd.DataFrame, name: str) -> None:
        path = self.run_paths.plot_data / name
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.10g")
        self.log(f"Wrote {path}")

    def write_loss(self, variant: str) -> None:
        path = self.require(
            get_run_paths.trace_path(self.run_paths, variant),
            f"{variant} loss trace",
            "train",
        )
        trace = LossTrace.from_csv(path)
        frame = trace.to_frame()
        frame["smoothed_loss"] = trace.smoothed(SMOOTHING_WINDOW)
        self._write(frame, f"loss_{variant}.csv")

    def write_precision_recall(self, variant: str) -> None:
        maps, grids = [], []
        for seed in self.test_seeds:
            path = self.require(
                get_run_paths.intensities_path(self.run_paths, variant, seed),
                f"{variant} intensities",
                "infer",
            )
            maps.extend(read_intensities(path))
            grids.extend(self.load_scenario(seed)[1])
        if not any(g.count for g in grids):
            self.log(f"No labeled events, skipping {variant} PR curve")
            return
        self._write(
            precision_recall_curve(maps, grids).to_frame(),
            f"pr_{variant}.csv",
        )

    def write_mota_bars(self) -> None:
        path = self.require(
            get_run_paths.report_path(self.run_paths), "run report", "eval"
        )
        with open(path, "r") as file:
            report = json.load(file)
        rows = [
            dict(
                method=method,
                mota=scores["mot"]["mota"],
                median_mota=scores["median_mota"],
            )
            for method, scores in report["methods"].items()
        ]
        self._write(pd.DataFrame(rows), "mota_bars.csv")

    def run(self, method: Optional[str] = None) -> None:
        for variant in self.cfg.variants:
            self.write_loss(variant)
            self.write_precision_recall(variant)
        self.write_mota_bars()
