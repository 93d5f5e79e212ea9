"""Offline tracking: tracklets, density-peak clustering, interpolation.

Detections are first chained into tracklets over consecutive frames under
strict appearance and overlap gates. Tracklets are then clustered: each
gets a local density (how many non-overlapping tracklets are similar to it)
and a maximal similarity to any denser tracklet. Tracklets without a
similar denser neighbor become cluster centers; the rest join the cluster
of their most similar denser tracklet. Each cluster becomes one trajectory
with gaps filled by linear interpolation.

Density ties are broken by index: tracklet j ranks above i when
(rho_j, -j) > (rho_i, -i).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from stpp_mot.boxes import iou
from stpp_mot.config import TrackerConfig
from stpp_mot.detections import Detection, group_by_frame
from stpp_mot.errors import RejectedInputError


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


@dataclass
class Tracklet:
    """Detections of one object over strictly consecutive frames."""

    detections: List[Detection]

    def __post_init__(self):
        if not self.detections:
            raise RejectedInputError("a tracklet needs at least one detection")
        frames = [d.frame for d in self.detections]
        if any(b != a + 1 for a, b in zip(frames[:-1], frames[1:])):
            raise RejectedInputError(
                f"tracklet frames must be consecutive, got {frames}"
            )

    def __len__(self) -> int:
        return len(self.detections)

    @property
    def start(self) -> int:
        return self.detections[0].frame

    @property
    def end(self) -> int:
        return self.detections[-1].frame

    @property
    def frames(self) -> List[int]:
        return [d.frame for d in self.detections]

    @property
    def boxes(self) -> np.ndarray:
        return np.array([d.box for d in self.detections], dtype=np.float64)

    @property
    def features(self) -> np.ndarray:
        return np.stack([d.feature_array() for d in self.detections])

    def overlaps(self, other: "Tracklet") -> bool:
        return self.start <= other.end and other.start <= self.end

    def at(self, frame: int) -> Detection:
        return self.detections[frame - self.start]


@dataclass
class SimilarityMatrix:
    """Symmetric tracklet similarities and temporal-overlap mask."""

    values: np.ndarray
    overlap: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.overlap = np.asarray(self.overlap, dtype=bool)
        n = len(self.values)
        if self.values.shape != (n, n) or self.overlap.shape != (n, n):
            raise RejectedInputError(
                f"similarity {self.values.shape} and overlap "
                f"{self.overlap.shape} must be square and equal"
            )

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class Trajectory:
    """Per-frame boxes of one identity, contiguous in time."""

    id: int
    frames: np.ndarray
    boxes: np.ndarray
    confidences: np.ndarray
    interpolated: np.ndarray
    detections: List[Detection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def to_detections(self) -> List[Detection]:
        return [
            Detection(
                frame=int(frame),
                box=tuple(box),
                confidence=float(conf),
                id=self.id,
            )
            for frame, box, conf in zip(
                self.frames, self.boxes, self.confidences
            )
        ]

    @classmethod
    def from_detections(
        cls, track_id: int, detections: Sequence[Detection]
    ) -> "Trajectory":
        """Trajectory holding one box per frame, gaps allowed."""
        ordered = sorted(detections, key=lambda d: d.frame)
        frames = [d.frame for d in ordered]
        if len(set(frames)) != len(frames):
            raise RejectedInputError(
                f"trajectory {track_id} has two boxes in one frame"
            )
        return cls(
            id=track_id,
            frames=np.array(frames, dtype=np.int64),
            boxes=np.array([d.box for d in ordered]).reshape(-1, 4),
            confidences=np.array([d.confidence for d in ordered]),
            interpolated=np.zeros(len(ordered), dtype=bool),
            detections=list(ordered),
        )


def trajectories_from_detections(
    detections: Sequence[Detection],
) -> List[Trajectory]:
    """Group detections with an id into trajectories, sorted by id."""
    by_id: Dict[int, List[Detection]] = {}
    for det in detections:
        by_id.setdefault(det.id, []).append(det)
    return [
        Trajectory.from_detections(track_id, by_id[track_id])
        for track_id in sorted(by_id)
    ]


def build_tracklets(
    detections: Sequence[Detection],
    theta_a: float = 0.8,
    theta_m: float = 0.3,
) -> List[Tracklet]:
    """Chain detections over consecutive frames.

    A detection at t links to one at t + 1 when appearance cosine >=
    ``theta_a`` and IoU >= ``theta_m``; candidate links are taken greedily
    by descending mean of the two scores, one-to-one.
    """
    by_frame = group_by_frame(detections)
    finished: List[List[Detection]] = []
    active: List[List[Detection]] = []
    previous_frame = None
    for frame in sorted(by_frame):
        current = by_frame[frame]
        if previous_frame is None or frame != previous_frame + 1:
            finished.extend(active)
            active = []
        candidates = []
        for i, chain in enumerate(active):
            tail = chain[-1]
            for j, det in enumerate(current):
                appearance = cosine_similarity(
                    tail.feature_array(), det.feature_array()
                )
                overlap = iou(tail.box, det.box)
                if appearance >= theta_a and overlap >= theta_m:
                    score = 0.5 * (appearance + overlap)
                    candidates.append((-score, i, j))
        candidates.sort()
        used_chains, used_dets = set(), set()
        links = {}
        for _, i, j in candidates:
            if i in used_chains or j in used_dets:
                continue
            used_chains.add(i)
            used_dets.add(j)
            links[j] = i
        next_active = []
        for i, chain in enumerate(active):
            if i not in used_chains:
                finished.append(chain)
        for j, det in enumerate(current):
            if j in links:
                chain = active[links[j]]
                chain.append(det)
                next_active.append(chain)
            else:
                next_active.append([det])
        active = next_active
        previous_frame = frame
    finished.extend(active)
    finished.sort(key=lambda chain: (chain[0].frame, chain[0].box))
    return [Tracklet(chain) for chain in finished]


def _velocity(boxes: np.ndarray) -> np.ndarray:
    """Mean per-frame displacement of (left, top); zero for one box."""
    if len(boxes) < 2:
        return np.zeros(2)
    return (boxes[-1, :2] - boxes[0, :2]) / (len(boxes) - 1)


def _shifted(box: np.ndarray, velocity: np.ndarray, dt: float) -> np.ndarray:
    out = np.array(box, dtype=np.float64)
    out[:2] += velocity * dt
    return out


def tracklet_similarity(a: Tracklet, b: Tracklet, k: int = 3) -> float:
    """Appearance-times-motion similarity of two tracklets in [0, 1].

    Tracklets that share frames are compared on up to ``k`` common frames
    by clipped cosine times IoU. Otherwise the earlier tracklet's m-th last
    detection is paired with the later one's m-th first (m <= k); each pair
    scores its clipped cosine times the mean IoU of the two boxes each
    moved across the gap at its own tracklet's constant velocity. The
    similarity is the mean pair score.
    """
    if a.overlaps(b):
        common = range(max(a.start, b.start), min(a.end, b.end) + 1)
        scores = []
        for frame in list(common)[:k]:
            da, db = a.at(frame), b.at(frame)
            appearance = cosine_similarity(
                da.feature_array(), db.feature_array()
            )
            scores.append(max(appearance, 0.0) * iou(da.box, db.box))
        return float(np.clip(np.mean(scores), 0.0, 1.0))

    early, late = (a, b) if a.end < b.start else (b, a)
    n_pairs = min(k, len(early), len(late))
    early_boxes, late_boxes = early.boxes, late.boxes
    early_velocity = _velocity(early_boxes[-min(k, len(early)) :])
    late_velocity = _velocity(late_boxes[: min(k, len(late))])
    scores = []
    for m in range(1, n_pairs + 1):
        de, dl = early.detections[-m], late.detections[m - 1]
        appearance = max(
            cosine_similarity(de.feature_array(), dl.feature_array()), 0.0
        )
        dt = dl.frame - de.frame
        forward = iou(_shifted(de.box, early_velocity, dt), dl.box)
        backward = iou(_shifted(dl.box, late_velocity, -dt), de.box)
        scores.append(appearance * 0.5 * (forward + backward))
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def similarity_matrix(
    tracklets: Sequence[Tracklet], k: int = 3
) -> SimilarityMatrix:
    n = len(tracklets)
    values = np.eye(n)
    overlap = np.eye(n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            s = tracklet_similarity(tracklets[i], tracklets[j], k)
            values[i, j] = values[j, i] = s
            overlap[i, j] = overlap[j, i] = tracklets[i].overlaps(
                tracklets[j]
            )
    return SimilarityMatrix(values, overlap)


def local_density(S: SimilarityMatrix, i: int, s_c: float = 0.5) -> int:
    """Number of non-overlapping tracklets with similarity strictly above
    ``s_c``."""
    if not 0.0 < s_c < 1.0:
        raise RejectedInputError(f"s_c must be in (0, 1), got {s_c}")
    free = ~S.overlap[i]
    free[i] = False
    return int(np.sum(S.values[i, free] > s_c))


def _ranks_above(rho: Sequence[float], j: int, i: int) -> bool:
    return (rho[j], -j) > (rho[i], -i)


def max_similarity(S: SimilarityMatrix, rho: Sequence[float], i: int) -> float:
    """Largest similarity to a denser non-overlapping tracklet, 0 if none."""
    best = 0.0
    for j in range(len(S)):
        if j != i and not S.overlap[i, j] and _ranks_above(rho, j, i):
            best = max(best, float(S.values[i, j]))
    return best


@dataclass
class ClusterAssignment:
    """Cluster label per tracklet; labels count centers in index order."""

    labels: np.ndarray
    centers: List[int]
    rho: np.ndarray
    delta: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    def members(self, label: int) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.labels == label)]


def cluster_tracklets(
    S: SimilarityMatrix, s_c: float = 0.5
) -> ClusterAssignment:
    n = len(S)
    rho = np.array([local_density(S, i, s_c) for i in range(n)], dtype=float)
    delta = np.array([max_similarity(S, rho, i) for i in range(n)])
    centers = [i for i in range(n) if delta[i] < s_c]
    labels = np.full(n, -1, dtype=np.int64)
    for label, center in enumerate(centers):
        labels[center] = label
    order = sorted(range(n), key=lambda i: (-rho[i], i))
    for i in order:
        if labels[i] >= 0:
            continue
        candidates = [
            j
            for j in range(n)
            if j != i and not S.overlap[i, j] and _ranks_above(rho, j, i)
        ]
        best_j = max(candidates, key=lambda j: (S.values[i, j], -j))
        labels[i] = labels[best_j]
    return ClusterAssignment(labels, centers, rho, delta)


def split_overlapping(tracklets: Sequence[Tracklet]) -> List[List[Tracklet]]:
    """Greedily partition tracklets into groups without temporal overlap,
    placing the longest first."""
    order = sorted(
        range(len(tracklets)),
        key=lambda i: (-len(tracklets[i]), tracklets[i].start, i),
    )
    groups: List[List[Tracklet]] = []
    for i in order:
        for group in groups:
            if not any(tracklets[i].overlaps(t) for t in group):
                group.append(tracklets[i])
                break
        else:
            groups.append([tracklets[i]])
    return groups


def interpolate(cluster: Sequence[Tracklet], track_id: int = 0) -> Trajectory:
    """Join a cluster into one trajectory, filling gaps linearly.

    Box corners (left, top, right, bottom) are interpolated per coordinate;
    original detections are kept unchanged.
    """
    if not cluster:
        raise RejectedInputError("interpolate needs a nonempty cluster")
    ordered = sorted(cluster, key=lambda t: t.start)
    for first, second in zip(ordered[:-1], ordered[1:]):
        if first.overlaps(second) or second.start <= first.end:
            raise RejectedInputError(
                f"tracklets [{first.start}, {first.end}] and "
                f"[{second.start}, {second.end}] overlap in time"
            )
    detections = [d for t in ordered for d in t.detections]
    frames, boxes, confidences, interpolated = [], [], [], []
    for k, det in enumerate(detections):
        if k > 0:
            prev = detections[k - 1]
            gap = det.frame - prev.frame
            a = np.array(prev.box)
            b = np.array(det.box)
            a_corners = np.concatenate([a[:2], a[:2] + a[2:]])
            b_corners = np.concatenate([b[:2], b[:2] + b[2:]])
            for step in range(1, gap):
                w = step / gap
                corners = (1 - w) * a_corners + w * b_corners
                frames.append(prev.frame + step)
                boxes.append(
                    np.concatenate([corners[:2], corners[2:] - corners[:2]])
                )
                confidences.append(min(prev.confidence, det.confidence))
                interpolated.append(True)
        frames.append(det.frame)
        boxes.append(np.array(det.box))
        confidences.append(det.confidence)
        interpolated.append(False)
    return Trajectory(
        id=track_id,
        frames=np.array(frames, dtype=np.int64),
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        confidences=np.array(confidences, dtype=np.float64),
        interpolated=np.array(interpolated, dtype=bool),
        detections=detections,
    )


def _group_key(group: Sequence[Tracklet]) -> tuple:
    first = min(group, key=lambda t: t.start)
    return (first.start, first.detections[0].box)


def track(
    detections: Sequence[Detection], cfg: Optional[TrackerConfig] = None
) -> List[Trajectory]:
    """Full offline tracker: tracklets, clustering, splitting, filling.

    Trajectory ids start at 1 and follow the first frame of each
    trajectory.
    """
    cfg = cfg or TrackerConfig()
    cfg.validate()
    tracklets = build_tracklets(detections, cfg.theta_a, cfg.theta_m)
    if not tracklets:
        return []
    S = similarity_matrix(tracklets, cfg.k)
    assignment = cluster_tracklets(S, cfg.s_c)
    groups: List[List[Tracklet]] = []
    for label in range(assignment.n_clusters):
        members = [tracklets[i] for i in assignment.members(label)]
        groups.extend(split_overlapping(members))
    groups.sort(key=_group_key)
    trajectories = [
        interpolate(group, track_id)
        for track_id, group in enumerate(groups, 1)
    ]
    logging.info(
        f"Tracked {len(detections)} detections into {len(tracklets)} "
        f"tracklets, {assignment.n_clusters} clusters and "
        f"{len(trajectories)} trajectories"
    )
    return trajectories
