"""Removal of detections that hold too many predicted events."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from stpp_mot.boxes import pixel_mask
from stpp_mot.detections import Detection
from stpp_mot.errors import RejectedConfigError, RejectedInputError
from stpp_mot.point_process import EventGrid


def event_ratio(det: Detection, grid: EventGrid) -> float:
    """Event pixels inside the box divided by the box area.

    Pixels belong to a box when their centers lie inside it, so an event
    pixel shared by two boxes counts for both. The area is floored at one
    pixel and the ratio capped at one; a box covering no pixel center has
    ratio 0.
    """
    if det.frame != grid.frame:
        raise RejectedInputError(
            f"detection frame {det.frame} differs from grid frame "
            f"{grid.frame}"
        )
    mask = pixel_mask(det.box, *grid.shape)
    area = max(float(det.box[2]) * float(det.box[3]), 1.0)
    return min(float(grid.cells[mask].sum()) / area, 1.0)


@dataclass
class FilterReport:
    """Per-detection ratio and decision for one filtering pass."""

    detections: List[Detection]
    ratios: np.ndarray
    kept: np.ndarray
    threshold: float

    @property
    def n_removed(self) -> int:
        return int(np.sum(~self.kept))

    def to_frame(self) -> pd.DataFrame:
        boxes = np.array([d.box for d in self.detections]).reshape(-1, 4)
        return pd.DataFrame(
            dict(
                frame=[d.frame for d in self.detections],
                left=boxes[:, 0],
                top=boxes[:, 1],
                width=boxes[:, 2],
                height=boxes[:, 3],
                r=self.ratios,
                kept=self.kept.astype(int),
            )
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.6g")
        return path


def filter_detections(
    detections: Sequence[Detection],
    grids: Sequence[EventGrid],
    tau_r: float = 0.5,
) -> Tuple[List[Detection], FilterReport]:
    """Drop detections whose event ratio exceeds ``tau_r``.

    Frames without a grid count as event-free.
    """
    if not 0.0 <= tau_r <= 1.0:
        raise RejectedConfigError(f"tau_r must be in [0, 1], got {tau_r}")
    by_frame = {grid.frame: grid for grid in grids}
    ratios = np.zeros(len(detections))
    for k, det in enumerate(detections):
        grid = by_frame.get(det.frame)
        if grid is not None:
            ratios[k] = event_ratio(det, grid)
    kept_mask = ~(ratios > tau_r)
    kept = [det for det, keep in zip(detections, kept_mask) if keep]
    report = FilterReport(list(detections), ratios, kept_mask, tau_r)
    logging.info(
        f"Filter kept {len(kept)} of {len(detections)} detections "
        f"(tau_r = {tau_r})"
    )
    return kept, report
