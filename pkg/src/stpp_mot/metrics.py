"""CLEAR-MOT tracking scores and event-prediction average precision."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import motmetrics as mm
import numpy as np
import pandas as pd

from stpp_mot.errors import RejectedInputError
from stpp_mot.point_process import EventGrid, IntensityMap
from stpp_mot.tracker import Trajectory

IOU_THRESHOLD = 0.5

MOT_METRICS = [
    "mota",
    "motp",
    "mostly_tracked",
    "mostly_lost",
    "num_false_positives",
    "num_misses",
    "num_switches",
    "num_objects",
    "num_predictions",
    "num_unique_objects",
    "num_detections",
]


def iou_distances(
    gt_boxes, pred_boxes, threshold: float = IOU_THRESHOLD
) -> np.ndarray:
    """[n_gt, n_pred] matrix of 1 - IoU, NaN where IoU < ``threshold``."""
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    distances = mm.distances.iou_matrix(
        gt_boxes, pred_boxes, max_iou=1.0 - threshold
    )
    return np.reshape(distances, (len(gt_boxes), len(pred_boxes)))


@dataclass
class FrameMatching:
    """One-to-one gt/prediction matches of one frame."""

    matches: List[Tuple[int, int]] = field(default_factory=list)
    ious: List[float] = field(default_factory=list)
    unmatched_gt: List[int] = field(default_factory=list)
    unmatched_pred: List[int] = field(default_factory=list)


def match_frame(
    gt_ids: Sequence[int],
    gt_boxes,
    pred_ids: Sequence[int],
    pred_boxes,
    previous: Optional[Mapping[int, int]] = None,
    threshold: float = IOU_THRESHOLD,
) -> FrameMatching:
    """Match boxes of one frame.

    Pairs matched in the previous frame are kept while their IoU stays at
    or above ``threshold``; the remaining boxes are assigned to maximize
    total IoU over pairs at or above ``threshold``.
    """
    gt_ids, pred_ids = list(gt_ids), list(pred_ids)
    distances = iou_distances(gt_boxes, pred_boxes, threshold)
    result = FrameMatching()
    free_gt = set(range(len(gt_ids)))
    free_pred = set(range(len(pred_ids)))

    def take(g: int, p: int) -> None:
        result.matches.append((gt_ids[g], pred_ids[p]))
        result.ious.append(float(np.clip(1.0 - distances[g, p], 0.0, 1.0)))
        free_gt.discard(g)
        free_pred.discard(p)

    pred_index = {p: k for k, p in enumerate(pred_ids)}
    for g, gt_id in enumerate(gt_ids):
        p = pred_index.get((previous or {}).get(gt_id))
        if p is not None and p in free_pred and np.isfinite(distances[g, p]):
            take(g, p)

    rows, cols = sorted(free_gt), sorted(free_pred)
    if rows and cols:
        sub = distances[np.ix_(rows, cols)]
        for r, c in zip(*mm.lap.linear_sum_assignment(sub)):
            if np.isfinite(sub[r, c]):
                take(rows[r], cols[c])
    result.unmatched_gt = [gt_ids[g] for g in sorted(free_gt)]
    result.unmatched_pred = [pred_ids[p] for p in sorted(free_pred)]
    return result


@dataclass
class MotReport:
    """CLEAR-MOT summary; MOTP is the mean matched IoU times 100.

    A gt track is mostly tracked when matched in at least 80% of its
    frames and mostly lost when matched in less than 20%.
    """

    mota: float
    motp: float
    mostly_tracked: float
    mostly_lost: float
    false_positives: int
    false_negatives: int
    id_switches: int
    n_gt: int
    n_pred: int
    n_gt_tracks: int
    recall: float
    precision: float

    @classmethod
    def from_summary(cls, row: pd.Series) -> "MotReport":
        """Build a report from one row of a motmetrics summary."""
        n_gt = int(row["num_objects"])
        n_pred = int(row["num_predictions"])
        n_tp = int(row["num_detections"])
        n_tracks = int(row["num_unique_objects"])
        # motmetrics reports MOTP as the mean distance 1 - IoU
        mean_iou = 1.0 - float(row["motp"]) if n_tp else 0.0
        return cls(
            mota=float(row["mota"]),
            motp=100.0 * float(np.clip(mean_iou, 0.0, 1.0)),
            mostly_tracked=int(row["mostly_tracked"]) / n_tracks,
            mostly_lost=int(row["mostly_lost"]) / n_tracks,
            false_positives=int(row["num_false_positives"]),
            false_negatives=int(row["num_misses"]),
            id_switches=int(row["num_switches"]),
            n_gt=n_gt,
            n_pred=n_pred,
            n_gt_tracks=n_tracks,
            recall=n_tp / n_gt,
            precision=n_tp / n_pred if n_pred else 0.0,
        )

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json(path, self.to_dict())
        return path


def write_json(path, payload: dict) -> None:
    with open(path, "w") as file:
        json.dump(_rounded(payload), file, indent=2, sort_keys=True)
        file.write("\n")


def _rounded(value):
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round(float(value), 10)
    return value


def _per_frame(
    trajectories: Sequence[Trajectory],
) -> Dict[int, Tuple[List[int], List[np.ndarray]]]:
    frames: Dict[int, Tuple[List[int], List[np.ndarray]]] = {}
    for traj in trajectories:
        for frame, box in zip(traj.frames, traj.boxes):
            ids, boxes = frames.setdefault(int(frame), ([], []))
            ids.append(traj.id)
            boxes.append(box)
    return frames


def accumulate(
    gt: Sequence[Trajectory], pred: Sequence[Trajectory]
) -> mm.MOTAccumulator:
    """Feed every frame of a sequence to a motmetrics accumulator.

    An identity switch is counted each time a ground-truth track is matched
    to a prediction id different from its last matched one.
    """
    gt_frames = _per_frame(gt)
    if not gt_frames:
        raise RejectedInputError("clear_mot needs at least one gt box")
    pred_frames = _per_frame(pred)
    acc = mm.MOTAccumulator(auto_id=False)
    for frame in sorted(set(gt_frames) | set(pred_frames)):
        gt_ids, gt_boxes = gt_frames.get(frame, ([], []))
        pred_ids, pred_boxes = pred_frames.get(frame, ([], []))
        acc.update(
            gt_ids,
            pred_ids,
            iou_distances(gt_boxes, pred_boxes),
            frameid=frame,
        )
    return acc


def clear_mot(
    gt: Sequence[Trajectory], pred: Sequence[Trajectory]
) -> MotReport:
    """Score predicted trajectories against ground truth."""
    summary = mm.metrics.create().compute(
        accumulate(gt, pred), metrics=MOT_METRICS, name="sequence"
    )
    return MotReport.from_summary(summary.loc["sequence"])


def clear_mot_many(
    sequences: Sequence[Tuple[Sequence[Trajectory], Sequence[Trajectory]]],
) -> Tuple[List[MotReport], MotReport]:
    """Score (gt, pred) pairs; also return their pooled report.

    The pooled report counts every sequence as if scored as one long
    sequence.
    """
    if not sequences:
        raise RejectedInputError("clear_mot_many needs at least one sequence")
    accumulators = [accumulate(gt, pred) for gt, pred in sequences]
    names = [f"sequence_{k}" for k in range(len(accumulators))]
    summary = mm.metrics.create().compute_many(
        accumulators,
        metrics=MOT_METRICS,
        names=names,
        generate_overall=True,
    )
    reports = [MotReport.from_summary(summary.loc[name]) for name in names]
    return reports, MotReport.from_summary(summary.loc["OVERALL"])


def _flatten(
    intensities: Sequence[IntensityMap], grids: Sequence[EventGrid]
) -> Tuple[np.ndarray, np.ndarray]:
    if len(intensities) != len(grids):
        raise RejectedInputError(
            f"{len(intensities)} intensity maps but {len(grids)} grids"
        )
    for lam, grid in zip(intensities, grids):
        if lam.shape != grid.shape:
            raise RejectedInputError(
                f"intensity {lam.shape} and grid {grid.shape} differ at "
                f"frame {grid.frame}"
            )
    if not grids:
        return np.zeros(0), np.zeros(0)
    scores = np.concatenate([m.values.reshape(-1) for m in intensities])
    targets = np.concatenate([g.cells.reshape(-1) for g in grids])
    return scores, targets.astype(np.float64)


@dataclass
class PrecisionRecall:
    """Precision and recall after each block of tied scores."""

    precision: np.ndarray
    recall: np.ndarray
    threshold: np.ndarray
    average_precision: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            dict(
                threshold=self.threshold,
                precision=self.precision,
                recall=self.recall,
            )
        )


def precision_recall(
    scores: np.ndarray, targets: np.ndarray
) -> PrecisionRecall:
    """Precision-recall curve with tied scores grouped into one block.

    Cells are ranked by descending score, ties kept in (frame, row, col)
    order. Average precision sums each block's precision weighted by the
    positives it holds, so a constant score yields the positive rate.
    """
    n_pos = float(np.sum(targets))
    if n_pos == 0:
        raise RejectedInputError("average precision needs a positive cell")
    order = np.argsort(-scores, kind="stable")
    ranked_scores = scores[order]
    ranked_targets = targets[order]
    last_of_block = np.ones(len(ranked_scores), dtype=bool)
    last_of_block[:-1] = ranked_scores[:-1] != ranked_scores[1:]
    predicted = np.flatnonzero(last_of_block) + 1
    true_pos = np.cumsum(ranked_targets)[last_of_block]
    hits = np.diff(np.concatenate([[0.0], true_pos]))
    precision = true_pos / predicted
    recall = true_pos / n_pos
    return PrecisionRecall(
        precision=precision,
        recall=recall,
        threshold=ranked_scores[last_of_block],
        average_precision=float(np.sum(precision * hits) / n_pos),
    )


def precision_recall_curve(
    intensities: Sequence[IntensityMap], grids: Sequence[EventGrid]
) -> PrecisionRecall:
    return precision_recall(*_flatten(intensities, grids))


def event_ap(
    intensities: Sequence[IntensityMap], grids: Sequence[EventGrid]
) -> float:
    """Average precision of intensities ranking the event cells."""
    ap = precision_recall_curve(intensities, grids).average_precision
    logging.info(f"Event AP = {ap:.4f}")
    return ap


def prior_ap(grids: Sequence[EventGrid]) -> float:
    """AP of a constant intensity, i.e. the rate of event cells."""
    maps = [IntensityMap(g.frame, np.ones(g.shape)) for g in grids]
    return event_ap(maps, grids)
