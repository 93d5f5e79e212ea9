"""Events, intensity maps and the discretized point-process likelihood.

An event is a pixel (t, x, y) inside a bad detection. Each frame's events are
held as a binary ``EventGrid``; the model emits a nonnegative
``IntensityMap`` per frame. The log-likelihood uses unit spatio-temporal
resolution: the sum of log-intensity over event cells minus the sum of
intensity over all other cells.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from stpp_mot import tensor as T
from stpp_mot.errors import (
    DataError,
    NumericError,
    RejectedConfigError,
    RejectedInputError,
)
from stpp_mot.tensor import Tensor


@dataclass(frozen=True, order=True)
class Event:
    """A bad-detection pixel: frame ``t``, column ``x``, row ``y``."""

    t: int
    x: int
    y: int


@dataclass
class EventGrid:
    """Binary [H, W] map of the events in one frame."""

    frame: int
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise RejectedInputError(
                f"EventGrid needs a 2-d grid, got shape {cells.shape}"
            )
        if not np.all((cells == 0) | (cells == 1)):
            raise RejectedInputError("EventGrid entries must be 0 or 1")
        self.cells = cells.astype(np.uint8)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cells.shape

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    def is_empty(self) -> bool:
        return self.count == 0

    def to_events(self) -> List[Event]:
        rows, cols = np.nonzero(self.cells)
        return [
            Event(self.frame, int(x), int(y)) for y, x in zip(rows, cols)
        ]

    @classmethod
    def from_events(
        cls, frame: int, events: Iterable[Event], height: int, width: int
    ) -> "EventGrid":
        cells = np.zeros((height, width), dtype=np.uint8)
        for event in events:
            if event.t != frame:
                raise RejectedInputError(
                    f"Event {event} does not belong to frame {frame}"
                )
            if not (0 <= event.x < width and 0 <= event.y < height):
                raise RejectedInputError(f"Event {event} is off the grid")
            cells[event.y, event.x] = 1
        return cls(frame, cells)

    @classmethod
    def empty(cls, frame: int, height: int, width: int) -> "EventGrid":
        return cls(frame, np.zeros((height, width), dtype=np.uint8))


@dataclass
class IntensityMap:
    """Nonnegative [H, W] intensity of one frame."""

    frame: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise RejectedInputError(
                f"IntensityMap needs a 2-d grid, got shape {values.shape}"
            )
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise RejectedInputError(
                "IntensityMap entries must be finite and >= 0"
            )
        self.values = values

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass
class EventHistory:
    """Frames holding at least one event, in increasing order."""

    grids: List[EventGrid] = field(default_factory=list)

    def __post_init__(self):
        frames = [g.frame for g in self.grids]
        if any(b <= a for a, b in zip(frames[:-1], frames[1:])):
            raise RejectedInputError(
                "EventHistory frames must be strictly increasing"
            )
        if any(g.is_empty() for g in self.grids):
            raise RejectedInputError("EventHistory grids must be nonempty")

    @classmethod
    def from_grids(cls, grids: Sequence[EventGrid]) -> "EventHistory":
        """Keep the nonempty grids of a per-frame sequence."""
        ordered = sorted(grids, key=lambda g: g.frame)
        return cls([g for g in ordered if not g.is_empty()])

    @property
    def frames(self) -> List[int]:
        return [g.frame for g in self.grids]

    @property
    def gaps(self) -> List[int]:
        """Inter-event durations F[i] - F[i-1] (the first measured from 0)."""
        frames = self.frames
        return [
            max(b - a, 1) for a, b in zip([0] + frames[:-1], frames)
        ]

    def grid_at(self, frame: int) -> Optional[EventGrid]:
        for grid in self.grids:
            if grid.frame == frame:
                return grid
        return None


def counting_function(events: Iterable[Event], t: int, x: int, y: int) -> int:
    """Number of events with frame <= t, column <= x and row <= y."""
    return sum(1 for e in events if e.t <= t and e.x <= x and e.y <= y)


def _check_pairs(
    intensities: Sequence, events: Sequence[EventGrid], shape_of
) -> None:
    if len(intensities) != len(events):
        raise RejectedInputError(
            f"{len(intensities)} intensity maps but {len(events)} event grids"
        )
    for intensity, grid in zip(intensities, events):
        if shape_of(intensity) != grid.shape:
            raise RejectedInputError(
                f"Intensity shape {shape_of(intensity)} does not match event "
                f"grid shape {grid.shape} at frame {grid.frame}"
            )


def log_likelihood(
    intensities: Sequence[IntensityMap], events: Sequence[EventGrid]
) -> float:
    """Discrete log-likelihood of event grids under intensity maps."""
    _check_pairs(intensities, events, lambda m: m.shape)
    total = 0.0
    for intensity, grid in zip(intensities, events):
        mask = grid.cells.astype(bool)
        at_events = intensity.values[mask]
        if np.any(at_events <= 0):
            row, col = np.argwhere(mask & (intensity.values <= 0))[0]
            raise NumericError(
                "log_likelihood",
                "log of non-positive intensity",
                frame=grid.frame,
                cell=(int(row), int(col)),
            )
        total += float(np.log(at_events).sum())
        total -= float(intensity.values[~mask].sum())
    return total


def log_likelihood_tensor(
    intensities: Sequence[Tensor], events: Sequence[EventGrid]
) -> Tensor:
    """Differentiable log-likelihood over [1, H, W] or [H, W] intensities."""
    _check_pairs(intensities, events, lambda m: m.shape[-2:])
    terms = []
    for intensity, grid in zip(intensities, events):
        mask = grid.cells.reshape(intensity.shape).astype(bool)
        try:
            event_term = T.sum(T.masked_log(intensity, mask))
        except NumericError as e:
            index = np.argwhere(mask & (intensity.data <= 0))[0]
            raise NumericError(
                "log_likelihood",
                "log of non-positive intensity",
                frame=grid.frame,
                cell=(int(index[-2]), int(index[-1])),
            ) from e
        rest = T.sum(T.mul(intensity, Tensor((~mask).astype(np.float64))))
        terms.append(T.sub(event_term, rest))
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return total


def predict_events(
    intensity: IntensityMap,
    mode: str = "threshold",
    tau_e: float = 0.5,
    rng: Optional[Union[np.random.Generator, int]] = None,
) -> EventGrid:
    """Infer an event grid from an intensity map.

    Threshold mode marks cells with intensity >= ``tau_e`` (with
    ``tau_e == 0`` only strictly positive cells count, so a zero map never
    holds events). Bernoulli mode draws each cell independently with
    probability min(intensity, 1).
    """
    if mode == "threshold":
        if tau_e < 0:
            raise RejectedConfigError(f"tau_e must be >= 0, got {tau_e}")
        cells = intensity.values >= tau_e
        if tau_e == 0:
            cells = intensity.values > 0
    elif mode == "bernoulli":
        rng = np.random.default_rng(rng)
        probability = np.minimum(intensity.values, 1.0)
        cells = rng.random(intensity.shape) < probability
    else:
        raise RejectedConfigError(f"Unknown prediction mode {mode}")
    return EventGrid(intensity.frame, cells.astype(np.uint8))


def _encode_row(row: np.ndarray) -> List[int]:
    runs = []
    current, length = 0, 0
    for value in row:
        if value == current:
            length += 1
        else:
            runs.append(length)
            current, length = int(value), 1
    runs.append(length)
    return runs


def _decode_row(runs: Sequence[int], width: int) -> np.ndarray:
    row = np.zeros(width, dtype=np.uint8)
    position, value = 0, 0
    for length in runs:
        row[position : position + length] = value
        position += length
        value = 1 - value
    return row


def write_event_grids(path, grids: Sequence[EventGrid]) -> Path:
    """Write grids as a header ``frame H W`` plus one run-length row per line.

    Each row lists run lengths alternating 0-runs and 1-runs, starting with
    a (possibly empty) run of zeros.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for grid in grids:
        height, width = grid.shape
        lines.append(f"{grid.frame} {height} {width}")
        for row in grid.cells:
            lines.append(" ".join(str(n) for n in _encode_row(row)))
    with open(path, "w") as file:
        file.write("\n".join(lines) + ("\n" if lines else ""))
    logging.info(f"Wrote {len(grids)} event grids to {path}")
    return path


def read_event_grids(path) -> List[EventGrid]:
    path = Path(path)
    if not path.exists():
        raise DataError("event grid file not found", path=str(path))
    with open(path, "r") as file:
        lines = file.read().splitlines()
    grids = []
    index = 0
    while index < len(lines):
        if not lines[index].strip():
            index += 1
            continue
        header = lines[index].split()
        try:
            frame, height, width = (int(v) for v in header)
        except ValueError:
            raise DataError(
                f"bad event grid header {lines[index]!r}",
                path=str(path),
                line=index + 1,
            )
        cells = np.zeros((height, width), dtype=np.uint8)
        for r in range(height):
            line_no = index + 2 + r
            if line_no > len(lines):
                raise DataError(
                    "truncated event grid", path=str(path), line=line_no
                )
            fields = lines[line_no - 1].split()
            try:
                runs = [int(v) for v in fields]
            except ValueError:
                raise DataError(
                    "run lengths must be integers",
                    path=str(path),
                    line=line_no,
                )
            if np.sum(runs) != width or any(n < 0 for n in runs):
                raise DataError(
                    f"run lengths sum to {np.sum(runs)}, expected {width}",
                    path=str(path),
                    line=line_no,
                )
            cells[r] = _decode_row(runs, width)
        grids.append(EventGrid(frame, cells))
        index += 1 + height
    return grids
