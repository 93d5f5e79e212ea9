from dataclasses import replace

import numpy as np
import pytest

from stpp_mot.boxes import iou
from stpp_mot.config import SimulationConfig
from stpp_mot.detections import Detection
from stpp_mot.errors import DataError, RejectedConfigError
from stpp_mot.simulate import (
    Agent,
    Scenario,
    detection_masks,
    events_from_labels,
    generate_scenario,
    label_confusing,
    load_scenario,
    save_scenario,
)
from stpp_mot.tracker import Trajectory


def test_same_seed_gives_same_scenario(tiny_simulation):
    first = generate_scenario(tiny_simulation, seed=3)
    second = generate_scenario(tiny_simulation, seed=3)
    assert first.detections == second.detections
    assert [d.feature for d in first.detections] == [
        d.feature for d in second.detections
    ]
    np.testing.assert_array_equal(first.frames, second.frames)
    other = generate_scenario(tiny_simulation, seed=4)
    assert other.detections != first.detections


def test_clean_scenario_has_only_good_detections(tiny_simulation):
    cfg = replace(tiny_simulation, noise_rate=0.0, confusion_rate=0.0)
    scenario = generate_scenario(cfg, seed=0)
    assert scenario.label_counts()["noisy"] == 0
    labeled = label_confusing(scenario, scenario.gt_trajectories())
    assert labeled.label_counts() == dict(
        good=len(scenario.detections), noisy=0, confusing=0
    )
    assert not any(g.count for g in events_from_labels(labeled))


def test_good_detections_overlap_their_agent(tiny_simulation):
    scenario = generate_scenario(tiny_simulation, seed=1)
    gt = {(d.frame, d.agent_id): d.box for d in scenario.gt_detections()}
    for det in scenario.detections:
        if det.label == "good":
            assert iou(det.box, gt[det.frame, det.agent_id]) >= 0.5


def test_noisy_detections_stay_near_their_source(tiny_simulation):
    cfg = replace(
        tiny_simulation, noise_rate=0.5, n_noise_sources=2, n_frames=100
    )
    scenario = generate_scenario(cfg, seed=2)
    gt_by_frame = {}
    for det in scenario.gt_detections():
        gt_by_frame.setdefault(det.frame, []).append(det.box)
    noisy = [d for d in scenario.detections if d.label == "noisy"]
    assert noisy
    for det in noisy:
        left, top, width, height = det.box
        center = np.array([left + width / 2.0, top + height / 2.0])
        distances = np.linalg.norm(scenario.noise_sources - center, axis=1)
        assert distances.min() <= cfg.noise_radius + 1e-6
        assert det.agent_id == -1
        for box in gt_by_frame.get(det.frame, []):
            assert iou(det.box, box) < 0.5


def test_frames_render_agents_brighter_than_clutter(tiny_simulation):
    scenario = generate_scenario(tiny_simulation, seed=5)
    assert scenario.frames.shape == (12, 16, 16)
    assert scenario.frames.min() >= 0.0 and scenario.frames.max() <= 1.0
    for det in scenario.gt_detections():
        assert scenario.frames[det.frame].max() >= 0.3


def test_box_too_large_for_the_grid(tiny_simulation):
    with pytest.raises(RejectedConfigError):
        generate_scenario(replace(tiny_simulation, max_box=16), seed=0)


def two_agent_scenario():
    cfg = SimulationConfig(
        n_agents=2, n_frames=5, height=16, width=16, n_noise_sources=0
    )
    agents = [
        Agent(k, (10.0 * k, 0.0), (0.0, 0.0), (4.0, 4.0), np.eye(2)[k], 0, 4)
        for k in range(2)
    ]
    detections = [
        Detection(t, agent.box_at(t, 16, 16), agent_id=agent.agent_id)
        for t in range(5)
        for agent in agents
    ]
    noisy = Detection(1, (0.5, 0.0, 4.0, 4.0), 0.5, label="noisy")
    return Scenario(
        cfg=cfg,
        seed=0,
        agents=agents,
        noise_sources=np.zeros((0, 2)),
        frames=np.zeros((5, 16, 16)),
        detections=detections + [noisy],
    )


def test_swapped_trajectories_label_the_swapped_detections():
    scenario = two_agent_scenario()
    own = {(d.frame, d.agent_id): d for d in scenario.detections[:-1]}
    noisy = scenario.detections[-1]
    first = [own[t, 0] for t in range(4)] + [own[4, 1]]
    second = [own[0, 1], noisy, own[2, 1], own[3, 1], own[4, 0]]
    labeled = label_confusing(
        scenario,
        [
            Trajectory.from_detections(1, first),
            Trajectory.from_detections(2, second),
        ],
    )
    confusing = {
        (d.frame, d.agent_id)
        for d in labeled.detections
        if d.label == "confusing"
    }
    assert confusing == {(4, 0), (4, 1)}
    assert labeled.detections[-1].label == "noisy"


def test_events_cover_bad_boxes():
    scenario = two_agent_scenario()
    scenario = scenario.with_detections(
        [
            Detection(0, (2.0, 2.0, 2.0, 2.0), label="noisy"),
            Detection(0, (8.0, 8.0, 2.0, 2.0)),
            Detection(1, (0.0, 0.0, 2.0, 2.0), label="confusing"),
            Detection(1, (1.0, 1.0, 2.0, 2.0), label="noisy"),
        ]
    )
    grids = events_from_labels(scenario)
    assert [g.frame for g in grids] == [0, 1, 2, 3, 4]
    assert grids[0].count == 4
    assert grids[0].cells[2:4, 2:4].all()
    assert grids[1].count == 7
    assert all(g.is_empty() for g in grids[2:])


def test_detection_masks():
    dets = [Detection(0, (0.0, 0.0, 2.0, 2.0)), Detection(2, (3, 3, 1, 1))]
    masks = detection_masks(dets, 2, 4, 4)
    assert masks.shape == (2, 4, 4)
    assert masks[0].sum() == 4 and masks[1].sum() == 0


def test_scenario_survives_save_and_load(tiny_simulation, tmp_path):
    scenario = generate_scenario(tiny_simulation, seed=7)
    loaded = load_scenario(save_scenario(scenario, tmp_path / "scenario"))
    assert loaded.cfg == scenario.cfg
    assert loaded.seed == 7
    assert loaded.detections == scenario.detections
    assert [d.feature for d in loaded.detections] == [
        d.feature for d in scenario.detections
    ]
    assert loaded.gt_detections() == scenario.gt_detections()
    np.testing.assert_array_equal(loaded.frames, scenario.frames)
    np.testing.assert_allclose(loaded.noise_sources, scenario.noise_sources)


def test_loading_without_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_scenario(tmp_path)
