"""Primary StageRunner class for synthetic runs."""

import logging
from pathlib import Path
from typing import Optional

from stpp_mot.config import RunConfig
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.model_interface import (
    InferenceInterface,
    TrainInterface,
)
from stpp_mot.synthetic.plot_data_interface import PlotDataInterface
from stpp_mot.synthetic.scenario_interface import ScenarioInterface
from stpp_mot.synthetic.tracking_interface import (
    EvaluationInterface,
    FilterInterface,
    TrackInterface,
)

PIPELINE_STAGES = ("simulate", "train", "infer", "filter", "track", "eval")


class StageRunner:
    """Primary class for running the stages of one run in order."""

    stage_interface_classes = dict(
        simulate=ScenarioInterface,
        train=TrainInterface,
        infer=InferenceInterface,
        filter=FilterInterface,
        track=TrackInterface,
        eval=EvaluationInterface,
        plot_data=PlotDataInterface,
    )

    def __init__(self, cfg: RunConfig, verbose: bool = True):
        self.cfg = cfg.validate()
        self.run_paths = get_run_paths.get_run_paths(cfg.out_dir)
        self.stage_interfaces = {
            name: cls(self.run_paths, self.cfg, verbose=verbose)
            for name, cls in self.stage_interface_classes.items()
        }

    def run_stage(self, name: str, method: Optional[str] = None) -> None:
        """Run stage ``name`` for ``method`` or for all its methods."""
        interface = self.stage_interfaces[name.replace("-", "_")]
        methods = interface.methods() if method is None else [method]
        for m in methods:
            logging.info(
                f"Running {interface.stage_name}"
                + ("" if m is None else f" for {m}")
            )
            interface.run(m)

    def run_pipeline(self) -> Path:
        """Chain every stage and return the path of the run report."""
        for name in PIPELINE_STAGES:
            self.run_stage(name)
        return get_run_paths.report_path(self.run_paths)
