"""Classes for training intensity models and inferring event grids."""

import dataclasses
from typing import List, Optional

import numpy as np

from stpp_mot import tensor as T
from stpp_mot.model import IntensityModel
from stpp_mot.point_process import (
    EventGrid,
    IntensityMap,
    write_event_grids,
)
from stpp_mot.simulate import detection_masks
from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.base_interface import BaseStageInterface
from stpp_mot.training import TrainingSample, train


def write_intensities(path, maps: List[IntensityMap]) -> None:
    """Write intensity maps as one [T, H, W] tensor record."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as file:
        T.write_tensor(file, T.Tensor(np.stack([m.values for m in maps])))


def read_intensities(path) -> List[IntensityMap]:
    with open(path, "rb") as file:
        values = T.read_tensor(file).data
    return [IntensityMap(t, values[t]) for t in range(len(values))]


class TrainInterface(BaseStageInterface):
    """Class for fitting one intensity model per variant.

    Training sequences are the first ``n_train_scenarios`` scenarios with
    their labeled event grids. Model weights are initialized from the run
    seed.
    """

    stage_name = "train"

    def methods(self) -> List[Optional[str]]:
        return list(self.cfg.variants)

    def training_samples(self) -> List[TrainingSample]:
        samples = []
        for seed in self.train_seeds:
            scenario, grids = self.load_scenario(seed)
            masks = detection_masks(
                scenario.detections, scenario.n_frames, *scenario.grid_shape
            )
            samples.append(TrainingSample(scenario.frames, masks, grids))
        return samples

    def run(self, method: Optional[str] = None) -> None:
        model_cfg = dataclasses.replace(self.cfg.model, variant=method)
        model = IntensityModel(model_cfg, seed=self.cfg.seed)
        stem = get_run_paths.model_path(self.run_paths, method)
        checkpoint_path = None
        if self.cfg.training.checkpoint_interval:
            checkpoint_path = stem.parent / f"{method}_checkpoint"
        model, trace = train(
            model, self.training_samples(), self.cfg.training, checkpoint_path
        )
        model.save(stem)
        trace.to_csv(get_run_paths.trace_path(self.run_paths, method))
        self.log(f"Saved {method} model to {stem}.ckpt")


class InferenceInterface(BaseStageInterface):
    """Class for running trained models over the held-out scenarios.

    The asynchronous stream reads events the model predicted itself, so no
    label reaches inference. Writes the intensity maps and the predicted
    event grids of every scenario.
    """

    stage_name = "infer"

    def methods(self) -> List[Optional[str]]:
        return list(self.cfg.variants)

    def run(self, method: Optional[str] = None) -> None:
        stem = get_run_paths.model_path(self.run_paths, method)
        self.require(stem.with_suffix(".json"), f"{method} model", "train")
        model = IntensityModel.load(stem)
        inference = self.cfg.inference
        for seed in self.test_seeds:
            scenario, _ = self.load_scenario(seed)
            masks = detection_masks(
                scenario.detections, scenario.n_frames, *scenario.grid_shape
            )
            grids: List[EventGrid] = []
            maps = model.forward_sequence(
                scenario.frames,
                masks,
                None,
                teacher_forcing=False,
                tau_e=inference.tau_e,
                mode=inference.mode,
                rng=np.random.default_rng(seed),
                predicted=grids,
            )
            write_intensities(
                get_run_paths.intensities_path(self.run_paths, method, seed),
                maps,
            )
            write_event_grids(
                get_run_paths.predicted_events_path(
                    self.run_paths, method, seed
                ),
                grids,
            )
            self.log(
                f"{method} seed {seed}: {sum(g.count for g in grids)} "
                f"predicted event cells"
            )
