"""Base class for the stages of a synthetic run."""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

from stpp_mot.config import RunConfig
from stpp_mot.errors import DataError
from stpp_mot.point_process import EventGrid, read_event_grids
from stpp_mot.simulate import Scenario, load_scenario
from stpp_mot.synthetic import get_run_paths


class BaseStageInterface:
    """Class for running one stage on the artifacts of a run.

    Subclasses set ``stage_name`` and implement ``run``. A stage reads only
    files written by earlier stages; a missing one raises a DataError that
    names the artifact and the stage producing it.
    """

    stage_name = ""

    def __init__(self, run_paths, cfg: RunConfig, verbose: bool = True):
        self.run_paths = run_paths
        self.cfg = cfg
        self.verbose = verbose

    @property
    def scenario_seeds(self) -> List[int]:
        return [self.cfg.seed + i for i in range(self.cfg.n_scenarios)]

    @property
    def train_seeds(self) -> List[int]:
        return self.scenario_seeds[: self.cfg.n_train_scenarios]

    @property
    def test_seeds(self) -> List[int]:
        """Held-out scenarios; all scenarios if none are held out."""
        held_out = self.scenario_seeds[self.cfg.n_train_scenarios :]
        return held_out or self.scenario_seeds

    def methods(self) -> List[Optional[str]]:
        """Values ``run`` is called with, once each."""
        return [None]

    def run(self, method: Optional[str] = None) -> None:
        raise NotImplementedError

    def require(self, path, artifact: str, stage: str) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataError(
                f"{artifact} not found; run the '{stage}' stage first",
                path=str(path),
            )
        return path

    def load_scenario(self, seed: int) -> Tuple[Scenario, List[EventGrid]]:
        """Scenario of ``seed`` with its labeled event grids."""
        directory = get_run_paths.scenario_dir(self.run_paths, seed)
        self.require(directory / "manifest.json", "scenario", "simulate")
        events_path = self.require(
            directory / "events.txt", "labeled events", "simulate"
        )
        scenario = load_scenario(directory)
        return scenario, read_event_grids(events_path)

    def log(self, message: str) -> None:
        if self.verbose:
            logging.info(f"[{self.stage_name}] {message}")
