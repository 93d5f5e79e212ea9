"""Axis-aligned boxes in pixel coordinates.

A box is (left, top, width, height). Pixel (row, col) belongs to a box when
its center (col + 0.5, row + 0.5) lies in the half-open rectangle
[left, left + width) x [top, top + height).
"""

from typing import Sequence

import numpy as np

from stpp_mot.errors import RejectedInputError


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (left, top, width, height) boxes."""
    a_right, a_bottom = a[0] + a[2], a[1] + a[3]
    b_right, b_bottom = b[0] + b[2], b[1] + b[3]
    inter_w = min(a_right, b_right) - max(a[0], b[0])
    inter_h = min(a_bottom, b_bottom) - max(a[1], b[1])
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between [N, 4] and [M, 4] box arrays."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    left = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    top = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    right = np.minimum(
        boxes_a[:, None, 0] + boxes_a[:, None, 2],
        boxes_b[None, :, 0] + boxes_b[None, :, 2],
    )
    bottom = np.minimum(
        boxes_a[:, None, 1] + boxes_a[:, None, 3],
        boxes_b[None, :, 1] + boxes_b[None, :, 3],
    )
    inter = np.clip(right - left, 0, None) * np.clip(bottom - top, 0, None)
    area_a = boxes_a[:, 2] * boxes_a[:, 3]
    area_b = boxes_b[:, 2] * boxes_b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def pixel_mask(box: Sequence[float], height: int, width: int) -> np.ndarray:
    """Boolean [height, width] mask of pixels whose centers lie in ``box``."""
    left, top, box_w, box_h = (float(v) for v in box)
    if box_w <= 0 or box_h <= 0:
        raise RejectedInputError(f"Box {tuple(box)} has zero area")
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    in_cols = (cols >= left) & (cols < left + box_w)
    in_rows = (rows >= top) & (rows < top + box_h)
    return in_rows[:, None] & in_cols[None, :]


def clip_box(box: Sequence[float], height: int, width: int) -> tuple:
    """Clip a box to the grid, keeping at least one pixel of extent."""
    left = min(max(float(box[0]), 0.0), width - 1.0)
    top = min(max(float(box[1]), 0.0), height - 1.0)
    right = min(max(float(box[0] + box[2]), left + 1.0), float(width))
    bottom = min(max(float(box[1] + box[3]), top + 1.0), float(height))
    return (left, top, right - left, bottom - top)
