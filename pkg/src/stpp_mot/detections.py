"""Detection records and MOTChallenge-style CSV files.

Each line is ``frame,id,left,top,width,height,conf,x,y,z`` optionally
followed by a label and appearance features. Frame numbers are stored as
given. Simulated detections keep their source agent in the ``x`` field
(-1 for detections with no agent).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from stpp_mot.errors import DataError, RejectedInputError

LABELS = ("good", "noisy", "confusing")
BAD_LABELS = ("noisy", "confusing")

MOT_FIELDS = 10


@dataclass(frozen=True)
class Detection:
    """One box in one frame.

    Attributes:
        frame: Frame index.
        box: (left, top, width, height) in pixels.
        confidence: Detector score in [0, 1].
        id: Track id, -1 for raw detections.
        label: "good", "noisy" or "confusing".
        feature: Appearance vector, or None.
        agent_id: Source agent of a simulated detection, -1 if none.
    """

    frame: int
    box: Tuple[float, float, float, float]
    confidence: float = 1.0
    id: int = -1
    label: str = "good"
    feature: Optional[Tuple[float, ...]] = field(default=None, compare=False)
    agent_id: int = -1

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        if len(box) != 4:
            raise RejectedInputError(f"box needs 4 values, got {self.box}")
        if box[2] <= 0 or box[3] <= 0:
            raise RejectedInputError(f"Box {box} has zero area")
        if not 0.0 <= self.confidence <= 1.0:
            raise RejectedInputError(
                f"confidence {self.confidence} outside [0, 1]"
            )
        if self.label not in LABELS:
            raise RejectedInputError(f"Unknown label {self.label}")
        object.__setattr__(self, "box", box)
        if self.feature is not None:
            object.__setattr__(
                self, "feature", tuple(float(v) for v in self.feature)
            )

    @property
    def is_bad(self) -> bool:
        return self.label in BAD_LABELS

    def feature_array(self) -> np.ndarray:
        if self.feature is None:
            raise RejectedInputError(
                f"detection at frame {self.frame} has no appearance feature"
            )
        return np.asarray(self.feature, dtype=np.float64)

    def replace(self, **changes) -> "Detection":
        values = dict(
            frame=self.frame,
            box=self.box,
            confidence=self.confidence,
            id=self.id,
            label=self.label,
            feature=self.feature,
            agent_id=self.agent_id,
        )
        values.update(changes)
        return Detection(**values)


def group_by_frame(detections: Sequence[Detection]) -> dict:
    """Map frame -> detections of that frame, in input order."""
    grouped = {}
    for det in detections:
        grouped.setdefault(det.frame, []).append(det)
    return grouped


def _format_number(value: float) -> str:
    return f"{value:.10g}"


def detection_to_row(det: Detection, with_extras: bool = True) -> str:
    fields = [
        str(det.frame),
        str(det.id),
        *(_format_number(v) for v in det.box),
        _format_number(det.confidence),
        str(det.agent_id),
        "-1",
        "-1",
    ]
    if with_extras:
        fields.append(det.label)
        if det.feature is not None:
            fields.extend(f"{v:.8g}" for v in det.feature)
    return ",".join(fields)


def write_mot_csv(
    path, detections: Sequence[Detection], with_extras: bool = True
) -> Path:
    """Write detections sorted by (frame, id) keeping input order on ties."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = sorted(
        range(len(detections)),
        key=lambda i: (detections[i].frame, detections[i].id),
    )
    lines = [detection_to_row(detections[i], with_extras) for i in order]
    with open(path, "w") as file:
        file.write("\n".join(lines) + ("\n" if lines else ""))
    logging.info(f"Wrote {len(lines)} rows to {path}")
    return path


def _field(
    row: Sequence, column: int, convert, path: Path, line: int, name: str
):
    try:
        return convert(row[column])
    except (TypeError, ValueError):
        raise DataError(
            f"cannot read {name} from {row[column]!r}",
            path=str(path),
            line=line,
            column=column + 1,
        )


def parse_mot_csv(path) -> List[Detection]:
    """Read a MOT CSV file; blank lines and an empty file are accepted.

    Raises:
        DataError: Missing file, short or malformed line (with line and
            column), or a box with negative extent.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("MOT file not found", path=str(path))
    with open(path, "r") as file:
        lines = file.read().splitlines()
    if not any(line.strip() for line in lines):
        return []
    width = max(len(line.split(",")) for line in lines)
    table = pd.read_csv(
        path,
        header=None,
        names=range(width),
        dtype=str,
        skip_blank_lines=False,
        keep_default_na=False,
    )
    detections = []
    for index, row in enumerate(table.itertuples(index=False)):
        line = index + 1
        row = [value.strip() for value in row]
        if not any(row):
            continue
        n_fields = len([v for v in row if v != ""])
        if n_fields < 7:
            raise DataError(
                f"expected at least 7 fields, found {n_fields}",
                path=str(path),
                line=line,
            )
        frame = _field(row, 0, int, path, line, "frame")
        track_id = _field(row, 1, lambda v: int(float(v)), path, line, "id")
        box = tuple(
            _field(row, c, float, path, line, name)
            for c, name in zip(range(2, 6), ("left", "top", "width", "height"))
        )
        if box[2] < 0 or box[3] < 0:
            raise DataError(
                f"negative box extent {box[2:]}",
                path=str(path),
                line=line,
                column=5 if box[2] < 0 else 6,
            )
        confidence = _field(row, 6, float, path, line, "conf")
        agent_id = -1
        if len(row) > 7 and row[7] != "":
            agent_id = _field(
                row, 7, lambda v: int(float(v)), path, line, "x"
            )
        label = "good"
        feature = None
        if len(row) > MOT_FIELDS and row[MOT_FIELDS] != "":
            label = row[MOT_FIELDS]
            if label not in LABELS:
                raise DataError(
                    f"unknown label {label!r}",
                    path=str(path),
                    line=line,
                    column=MOT_FIELDS + 1,
                )
            extra = [v for v in row[MOT_FIELDS + 1 :] if v != ""]
            if extra:
                feature = tuple(
                    _field(row, MOT_FIELDS + 1 + k, float, path, line, "f")
                    for k in range(len(extra))
                )
        try:
            detections.append(
                Detection(
                    frame=frame,
                    box=box,
                    confidence=min(max(confidence, 0.0), 1.0),
                    id=track_id,
                    label=label,
                    feature=feature,
                    agent_id=agent_id,
                )
            )
        except RejectedInputError as e:
            raise DataError(str(e), path=str(path), line=line) from e
    return detections
