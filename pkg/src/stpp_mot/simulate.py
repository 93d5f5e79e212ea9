"""Synthetic multi-agent scenarios with labeled bad detections.

Agents are boxes moving at constant velocity over a grayscale grid. Every
agent yields a jittered detection per frame. A few fixed noise sources emit
false positives near their centers; a source that fired in the previous
frame is more likely to fire again. Agents whose paths cross may share
nearly the same appearance, which makes a tracker confuse them; those
detections are labeled afterwards from a baseline tracker's output.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from stpp_mot import tensor as T
from stpp_mot.boxes import clip_box, iou, iou_matrix, pixel_mask
from stpp_mot.config import SimulationConfig, section_from_dict
from stpp_mot.detections import (
    Detection,
    group_by_frame,
    parse_mot_csv,
    write_mot_csv,
)
from stpp_mot.errors import DataError, RejectedConfigError
from stpp_mot.point_process import EventGrid
from stpp_mot.tracker import Trajectory, trajectories_from_detections

SCENARIO_FORMAT_VERSION = 1

_MAX_DRAWS = 50


@dataclass
class Agent:
    """A box moving at constant velocity during ``[start, end]``."""

    agent_id: int
    position: Tuple[float, float]
    velocity: Tuple[float, float]
    size: Tuple[float, float]
    appearance: np.ndarray
    start: int
    end: int

    @property
    def brightness(self) -> float:
        """Gray level in [0.3, 1] rendered for this agent."""
        return 0.3 + 0.35 * (1.0 + float(self.appearance[0]))

    def alive(self, frame: int) -> bool:
        return self.start <= frame <= self.end

    def box_at(self, frame: int, height: int, width: int) -> tuple:
        dt = frame - self.start
        left = self.position[0] + self.velocity[0] * dt
        top = self.position[1] + self.velocity[1] * dt
        left = float(np.clip(left, 0.0, width - self.size[0]))
        top = float(np.clip(top, 0.0, height - self.size[1]))
        return (left, top, float(self.size[0]), float(self.size[1]))

    def to_dict(self) -> dict:
        return dict(
            agent_id=self.agent_id,
            position=list(self.position),
            velocity=list(self.velocity),
            size=list(self.size),
            appearance=[float(v) for v in self.appearance],
            start=self.start,
            end=self.end,
        )

    @classmethod
    def from_dict(cls, values: dict) -> "Agent":
        return cls(
            agent_id=int(values["agent_id"]),
            position=tuple(values["position"]),
            velocity=tuple(values["velocity"]),
            size=tuple(values["size"]),
            appearance=np.asarray(values["appearance"], dtype=np.float64),
            start=int(values["start"]),
            end=int(values["end"]),
        )


@dataclass
class Scenario:
    """One simulated sequence with ground truth and labeled detections."""

    cfg: SimulationConfig
    seed: int
    agents: List[Agent]
    noise_sources: np.ndarray
    frames: np.ndarray
    detections: List[Detection]
    confusing_pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.frames.shape[1:]

    def gt_detections(self) -> List[Detection]:
        height, width = self.grid_shape
        return [
            Detection(
                frame=t,
                box=agent.box_at(t, height, width),
                id=agent.agent_id,
                agent_id=agent.agent_id,
            )
            for t in range(self.n_frames)
            for agent in self.agents
            if agent.alive(t)
        ]

    def gt_trajectories(self) -> List[Trajectory]:
        return trajectories_from_detections(self.gt_detections())

    def with_detections(self, detections: Sequence[Detection]) -> "Scenario":
        return dataclasses.replace(self, detections=list(detections))

    def label_counts(self) -> Dict[str, int]:
        counts = dict(good=0, noisy=0, confusing=0)
        for det in self.detections:
            counts[det.label] += 1
        return counts


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vector = rng.normal(size=dim)
    return vector / np.linalg.norm(vector)


def _check_feasible(cfg: SimulationConfig) -> None:
    cfg.validate()
    if cfg.max_box >= min(cfg.height, cfg.width):
        raise RejectedConfigError(
            f"max_box {cfg.max_box} does not fit the "
            f"{cfg.height}x{cfg.width} grid"
        )


def _make_agents(
    cfg: SimulationConfig, rng: np.random.Generator
) -> List[Agent]:
    agents = []
    for agent_id in range(cfg.n_agents):
        width, height = rng.integers(cfg.min_box, cfg.max_box + 1, size=2)
        start = int(rng.integers(0, max(cfg.n_frames // 4, 1)))
        end = int(
            rng.integers(
                min(3 * cfg.n_frames // 4, cfg.n_frames - 1), cfg.n_frames
            )
        )
        angle = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(0.3, 1.0) * cfg.max_speed
        agents.append(
            Agent(
                agent_id=agent_id,
                position=(
                    float(rng.uniform(0, cfg.width - width)),
                    float(rng.uniform(0, cfg.height - height)),
                ),
                velocity=(speed * np.cos(angle), speed * np.sin(angle)),
                size=(float(width), float(height)),
                appearance=_unit(rng, cfg.feature_dim),
                start=start,
                end=max(end, start),
            )
        )
    return agents


def _center(box: Sequence[float]) -> np.ndarray:
    return np.array([box[0] + box[2] / 2.0, box[1] + box[3] / 2.0])


def _crossing_pairs(
    agents: Sequence[Agent], cfg: SimulationConfig
) -> List[Tuple[int, int]]:
    pairs = []
    for i, a in enumerate(agents):
        for b in agents[i + 1 :]:
            for t in range(max(a.start, b.start), min(a.end, b.end) + 1):
                distance = np.linalg.norm(
                    _center(a.box_at(t, cfg.height, cfg.width))
                    - _center(b.box_at(t, cfg.height, cfg.width))
                )
                if distance <= cfg.crossing_distance:
                    pairs.append((a.agent_id, b.agent_id))
                    break
    return pairs


def _assign_confusing_appearance(
    agents: List[Agent],
    cfg: SimulationConfig,
    rng: np.random.Generator,
) -> List[Tuple[int, int]]:
    """Give crossing agents near-identical appearance (cosine >= 0.98)."""
    confusing = []
    for i, j in _crossing_pairs(agents, cfg):
        if rng.random() < cfg.confusion_rate:
            twin = agents[i].appearance + 0.1 * _unit(rng, cfg.feature_dim)
            agents[j].appearance = twin / np.linalg.norm(twin)
            confusing.append((i, j))
    return confusing


def _good_detection(
    agent: Agent,
    frame: int,
    cfg: SimulationConfig,
    rng: np.random.Generator,
) -> Detection:
    gt_box = agent.box_at(frame, cfg.height, cfg.width)
    corners = np.array(
        [gt_box[0], gt_box[1], gt_box[0] + gt_box[2], gt_box[1] + gt_box[3]]
    )
    box = gt_box
    for _ in range(_MAX_DRAWS):
        jittered = corners + rng.normal(0.0, cfg.jitter_sigma, size=4)
        candidate = clip_box(
            (
                jittered[0],
                jittered[1],
                jittered[2] - jittered[0],
                jittered[3] - jittered[1],
            ),
            cfg.height,
            cfg.width,
        )
        candidate = tuple(round(v, 2) for v in candidate)
        valid = candidate[2] > 0 and candidate[3] > 0
        if valid and iou(candidate, gt_box) >= 0.5:
            box = candidate
            break
    else:
        logging.warning(
            f"Jitter draws for agent {agent.agent_id} at frame {frame} kept "
            f"missing the box; using the exact box"
        )
        box = tuple(round(v, 2) for v in gt_box)
    feature = agent.appearance + rng.normal(
        0.0, cfg.feature_noise, size=cfg.feature_dim
    )
    return Detection(
        frame=frame,
        box=box,
        confidence=round(float(rng.uniform(0.6, 1.0)), 3),
        feature=tuple(np.round(feature, 6)),
        agent_id=agent.agent_id,
    )


def _noisy_detection(
    source: np.ndarray,
    frame: int,
    gt_boxes: np.ndarray,
    cfg: SimulationConfig,
    rng: np.random.Generator,
) -> Optional[Detection]:
    """Box centered within ``noise_radius`` of ``source`` that overlaps no
    ground-truth box with IoU >= 0.5, or None after repeated misses."""
    for _ in range(_MAX_DRAWS):
        width, height = rng.integers(cfg.min_box, cfg.max_box + 1, size=2)
        radius = cfg.noise_radius * np.sqrt(rng.random())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        center = source + radius * np.array([np.cos(angle), np.sin(angle)])
        box = (
            round(float(center[0] - width / 2.0), 2),
            round(float(center[1] - height / 2.0), 2),
            float(width),
            float(height),
        )
        inside = (
            box[0] >= 0
            and box[1] >= 0
            and box[0] + box[2] <= cfg.width
            and box[1] + box[3] <= cfg.height
        )
        if not inside:
            continue
        if np.linalg.norm(_center(box) - source) > cfg.noise_radius:
            continue
        if len(gt_boxes) and iou_matrix([box], gt_boxes).max() >= 0.5:
            continue
        feature = _unit(rng, cfg.feature_dim)
        return Detection(
            frame=frame,
            box=box,
            confidence=round(float(rng.uniform(0.3, 0.9)), 3),
            label="noisy",
            feature=tuple(np.round(feature, 6)),
        )
    logging.warning(f"No valid noisy box near {source} at frame {frame}")
    return None


def render_frames(
    agents: Sequence[Agent],
    noise_sources: np.ndarray,
    cfg: SimulationConfig,
) -> np.ndarray:
    """Occupancy rasters [T, H, W]: agents as filled boxes over faint
    clutter disks at the noise sources."""
    rows, cols = np.mgrid[0 : cfg.height, 0 : cfg.width] + 0.5
    clutter = np.zeros((cfg.height, cfg.width))
    for source in noise_sources:
        near = np.hypot(cols - source[0], rows - source[1])
        clutter[near <= cfg.noise_radius] = cfg.clutter_intensity
    frames = np.repeat(clutter[None], cfg.n_frames, axis=0)
    for t in range(cfg.n_frames):
        for agent in agents:
            if agent.alive(t):
                mask = pixel_mask(
                    agent.box_at(t, cfg.height, cfg.width),
                    cfg.height,
                    cfg.width,
                )
                frames[t][mask] = np.maximum(
                    frames[t][mask], agent.brightness
                )
    return frames


def generate_scenario(cfg: SimulationConfig, seed: int) -> Scenario:
    """Simulate one sequence; identical (cfg, seed) give identical output.

    Raises:
        RejectedConfigError: Invalid ranges, or boxes that cannot fit the
            grid.
    """
    _check_feasible(cfg)
    rng = np.random.default_rng(seed)
    agents = _make_agents(cfg, rng)
    confusing_pairs = _assign_confusing_appearance(agents, cfg, rng)
    margin = min(cfg.noise_radius, min(cfg.height, cfg.width) / 4.0)
    noise_sources = np.column_stack(
        [
            rng.uniform(margin, cfg.width - margin, cfg.n_noise_sources),
            rng.uniform(margin, cfg.height - margin, cfg.n_noise_sources),
        ]
    ).reshape(-1, 2)

    detections: List[Detection] = []
    fired = np.zeros(len(noise_sources), dtype=bool)
    for t in range(cfg.n_frames):
        alive = [a for a in agents if a.alive(t)]
        for agent in alive:
            if rng.random() < cfg.miss_rate:
                continue
            detections.append(_good_detection(agent, t, cfg, rng))
        gt_boxes = np.array(
            [a.box_at(t, cfg.height, cfg.width) for a in alive]
        ).reshape(-1, 4)
        for s, source in enumerate(noise_sources):
            rate = cfg.noise_rate
            if fired[s] and cfg.noise_rate > 0:
                rate = min(1.0, rate + cfg.noise_excitation)
            fired[s] = bool(rng.random() < rate)
            if fired[s]:
                noisy = _noisy_detection(source, t, gt_boxes, cfg, rng)
                if noisy is not None:
                    detections.append(noisy)

    scenario = Scenario(
        cfg=cfg,
        seed=seed,
        agents=agents,
        noise_sources=noise_sources,
        frames=render_frames(agents, noise_sources, cfg),
        detections=detections,
        confusing_pairs=confusing_pairs,
    )
    logging.info(
        f"Simulated scenario seed={seed}: {len(agents)} agents, "
        f"{len(detections)} detections {scenario.label_counts()}"
    )
    return scenario


def _agent_of(det: Detection, gt_by_frame: Dict[int, List[Detection]]) -> int:
    """Agent whose gt box has the largest IoU >= 0.5 with ``det``, else -1."""
    best_id, best = -1, 0.5
    for gt in gt_by_frame.get(det.frame, []):
        overlap = iou(det.box, gt.box)
        if overlap >= best:
            best_id, best = gt.agent_id, overlap
    return best_id


def label_confusing(
    scenario: Scenario, trajectories: Sequence[Trajectory]
) -> Scenario:
    """Label detections that a tracker put in another agent's trajectory.

    Each trajectory takes the agent that most of its detections belong to
    (by IoU against ground truth, ties to the lower agent id); its
    detections of any other agent become confusing. Noisy detections keep
    their label.
    """
    gt_by_frame = group_by_frame(scenario.gt_detections())
    relabel = set()
    for traj in trajectories:
        owners = [_agent_of(d, gt_by_frame) for d in traj.detections]
        known = [o for o in owners if o >= 0]
        if not known:
            continue
        values, counts = np.unique(known, return_counts=True)
        majority = int(values[np.argmax(counts)])
        for det, owner in zip(traj.detections, owners):
            if owner >= 0 and owner != majority:
                relabel.add((det.frame, det.box))
    detections = [
        det.replace(label="confusing")
        if (det.frame, det.box) in relabel and det.label != "noisy"
        else det
        for det in scenario.detections
    ]
    n_confusing = sum(d.label == "confusing" for d in detections)
    logging.info(f"Labeled {n_confusing} detections as confusing")
    return scenario.with_detections(detections)


def events_from_labels(scenario: Scenario) -> List[EventGrid]:
    """Per-frame union of the pixels inside noisy or confusing boxes."""
    height, width = scenario.grid_shape
    cells = np.zeros((scenario.n_frames, height, width), dtype=np.uint8)
    for det in scenario.detections:
        if det.is_bad and 0 <= det.frame < scenario.n_frames:
            cells[det.frame][pixel_mask(det.box, height, width)] = 1
    return [EventGrid(t, cells[t]) for t in range(scenario.n_frames)]


def detection_masks(
    detections: Sequence[Detection], n_frames: int, height: int, width: int
) -> np.ndarray:
    """Binary [T, H, W] union of the pixels inside each frame's boxes."""
    masks = np.zeros((n_frames, height, width))
    for det in detections:
        if 0 <= det.frame < n_frames:
            masks[det.frame][pixel_mask(det.box, height, width)] = 1.0
    return masks


def save_scenario(scenario: Scenario, directory) -> Path:
    """Write detections.csv, gt.csv, frames.tensor and manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_mot_csv(directory / "detections.csv", scenario.detections)
    write_mot_csv(
        directory / "gt.csv", scenario.gt_detections(), with_extras=False
    )
    with open(directory / "frames.tensor", "wb") as file:
        T.write_tensor(file, T.Tensor(scenario.frames))
    manifest = dict(
        format_version=SCENARIO_FORMAT_VERSION,
        seed=scenario.seed,
        simulation=dataclasses.asdict(scenario.cfg),
        agents=[agent.to_dict() for agent in scenario.agents],
        noise_sources=scenario.noise_sources.tolist(),
        confusing_pairs=[list(p) for p in scenario.confusing_pairs],
    )
    with open(directory / "manifest.json", "w") as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
        file.write("\n")
    logging.info(f"Saved scenario seed={scenario.seed} to {directory}")
    return directory


def load_scenario(directory) -> Scenario:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError("scenario manifest not found", path=str(manifest_path))
    with open(manifest_path, "r") as file:
        manifest = json.load(file)
    frames_path = directory / "frames.tensor"
    if not frames_path.exists():
        raise DataError("scenario frames not found", path=str(frames_path))
    with open(frames_path, "rb") as file:
        try:
            frames = T.read_tensor(file).data
        except EOFError as e:
            raise DataError(str(e), path=str(frames_path)) from e
    cfg = section_from_dict(
        SimulationConfig, manifest["simulation"], "simulation"
    )
    return Scenario(
        cfg=cfg,
        seed=int(manifest["seed"]),
        agents=[Agent.from_dict(a) for a in manifest["agents"]],
        noise_sources=np.asarray(manifest["noise_sources"]).reshape(-1, 2),
        frames=frames,
        detections=parse_mot_csv(directory / "detections.csv"),
        confusing_pairs=[tuple(p) for p in manifest["confusing_pairs"]],
    )
