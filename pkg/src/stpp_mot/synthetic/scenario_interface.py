"""Class for simulating the scenarios of a run."""

from typing import Optional

from stpp_mot.point_process import write_event_grids
from stpp_mot.simulate import (
    events_from_labels,
    generate_scenario,
    label_confusing,
    save_scenario,
)
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.base_interface import BaseStageInterface
from stpp_mot.tracker import track


class ScenarioInterface(BaseStageInterface):
    """Class for simulating scenarios and labeling their bad detections.

    Confusing labels come from the unfiltered tracker: detections that it
    places in a trajectory owned by another agent. The union of noisy and
    confusing boxes per frame is written as the labeled event grids.
    """

    stage_name = "simulate"

    def run(self, method: Optional[str] = None) -> None:
        for seed in self.scenario_seeds:
            scenario = generate_scenario(self.cfg.simulation, seed)
            baseline = track(scenario.detections, self.cfg.tracker)
            scenario = label_confusing(scenario, baseline)
            directory = save_scenario(
                scenario, get_run_paths.scenario_dir(self.run_paths, seed)
            )
            grids = events_from_labels(scenario)
            write_event_grids(directory / "events.txt", grids)
            counts = scenario.label_counts()
            self.log(
                f"seed {seed}: {len(scenario.detections)} detections "
                f"{counts}, {sum(g.count for g in grids)} event cells"
            )
