import numpy as np
import pytest

from stpp_mot.config import TrackerConfig
from stpp_mot.detections import Detection
from stpp_mot.errors import RejectedInputError
from stpp_mot.tracker import (
    SimilarityMatrix,
    Tracklet,
    build_tracklets,
    cluster_tracklets,
    interpolate,
    local_density,
    max_similarity,
    similarity_matrix,
    split_overlapping,
    track,
    tracklet_similarity,
)

RED = (1.0, 0.0, 0.0)
BLUE = (0.0, 1.0, 0.0)


def det(frame, left, top=0.0, feature=RED, size=4.0):
    return Detection(frame, (left, top, size, size), 0.9, feature=feature)


def tracklet(frames, left=0.0, speed=0.0, feature=RED):
    return Tracklet(
        [
            det(f, left + speed * (f - frames[0]), feature=feature)
            for f in frames
        ]
    )


def test_single_object_gives_one_tracklet():
    tracklets = build_tracklets([det(t, 0.1 * t) for t in range(5)])
    assert len(tracklets) == 1
    assert tracklets[0].frames == [0, 1, 2, 3, 4]


def test_swapping_objects_are_not_linked_across_appearance():
    dets = [
        det(0, 0.0, feature=RED),
        det(0, 2.0, feature=BLUE),
        det(1, 2.0, feature=RED),
        det(1, 0.0, feature=BLUE),
    ]
    tracklets = build_tracklets(dets, theta_a=0.8, theta_m=0.3)
    for t in tracklets:
        features = {d.feature for d in t.detections}
        assert len(features) == 1
    assert sum(len(t) for t in tracklets) == 4


def test_missing_frame_breaks_tracklet():
    dets = [det(0, 0.0), det(1, 0.0), det(3, 0.0), det(4, 0.0)]
    assert [t.frames for t in build_tracklets(dets)] == [[0, 1], [3, 4]]


def test_tracklet_requires_consecutive_frames():
    with pytest.raises(RejectedInputError):
        Tracklet([det(0, 0.0), det(2, 0.0)])


def test_similarity_of_identical_copies_is_one():
    a = tracklet([0, 1, 2], speed=1.0)
    b = tracklet([0, 1, 2], speed=1.0)
    assert tracklet_similarity(a, b) == pytest.approx(1.0)


def test_orthogonal_appearance_gives_zero_similarity():
    a = tracklet([0, 1, 2], feature=RED)
    b = tracklet([3, 4, 5], feature=BLUE)
    assert tracklet_similarity(a, b) == 0.0


def test_similarity_hand_case():
    # Early tracklet moves +1 px per frame, late one is static
    early = tracklet([0, 1], left=0.0, speed=1.0)
    late = tracklet([4, 5], left=4.0)
    # pair m=1: frames 1 and 4, dt=3; forward box at 1+3=4 matches late
    # exactly, backward (static) stays at 4 vs early's 1 -> overlap 1/7
    first = 0.5 * (1.0 + 1.0 / 7.0)
    # pair m=2: frames 0 and 5, dt=5; forward lands at 5 vs 4 -> 3/5,
    # backward stays at 4 vs 0 -> 0
    second = 0.5 * (3.0 / 5.0 + 0.0)
    expected = 0.5 * (first + second)
    assert tracklet_similarity(early, late) == pytest.approx(expected)
    assert tracklet_similarity(late, early) == pytest.approx(expected)


def matrix(values, overlap=None):
    values = np.asarray(values, dtype=float)
    if overlap is None:
        overlap = np.eye(len(values), dtype=bool)
    return SimilarityMatrix(values, overlap)


def test_local_density_counts_similar_free_neighbors():
    S = matrix([[1.0, 0.6, 0.7], [0.6, 1.0, 0.1], [0.7, 0.1, 1.0]])
    assert local_density(S, 0, 0.5) == 2
    assert local_density(S, 1, 0.5) == 1
    low = matrix([[1.0, 0.2], [0.2, 1.0]])
    assert local_density(low, 0, 0.5) == 0


def test_overlapping_neighbor_does_not_count():
    overlap = np.ones((2, 2), dtype=bool)
    S = matrix([[1.0, 0.9], [0.9, 1.0]], overlap)
    assert local_density(S, 0, 0.5) == 0


def test_max_similarity():
    S = matrix([[1.0, 0.6, 0.7], [0.6, 1.0, 0.1], [0.7, 0.1, 1.0]])
    rho = [local_density(S, i, 0.5) for i in range(3)]
    assert max_similarity(S, rho, 0) == 0.0
    assert max_similarity(S, rho, 2) == 0.7
    S = matrix([[1.0, 0.3, 0.8], [0.3, 1.0, 0.0], [0.8, 0.0, 1.0]])
    assert max_similarity(S, [0.0, 2.0, 1.0], 0) == 0.8


def test_documented_three_tracklet_case():
    S = matrix([[1.0, 0.6, 0.7], [0.6, 1.0, 0.1], [0.7, 0.1, 1.0]])
    assignment = cluster_tracklets(S, 0.5)
    np.testing.assert_array_equal(assignment.rho, [2, 1, 1])
    np.testing.assert_allclose(assignment.delta, [0.0, 0.6, 0.7])
    assert assignment.centers == [0]
    np.testing.assert_array_equal(assignment.labels, [0, 0, 0])


def test_dissimilar_tracklets_are_their_own_clusters():
    S = matrix(np.eye(4) + 0.1 * (1 - np.eye(4)))
    assignment = cluster_tracklets(S, 0.5)
    assert assignment.n_clusters == 4


def test_two_similar_tracklets_form_one_cluster():
    assignment = cluster_tracklets(matrix([[1.0, 0.9], [0.9, 1.0]]), 0.5)
    assert assignment.centers == [0]
    np.testing.assert_array_equal(assignment.labels, [0, 0])


def brute_force_clusters(values, overlap, s_c):
    n = len(values)
    rho = []
    for i in range(n):
        count = 0
        for j in range(n):
            if j != i and not overlap[i][j] and values[i][j] > s_c:
                count += 1
        rho.append(count)
    rank = sorted(range(n), key=lambda i: (-rho[i], i))
    position = {i: p for p, i in enumerate(rank)}
    delta, parent = [], []
    for i in range(n):
        best, best_j = 0.0, None
        for j in range(n):
            if position[j] < position[i] and not overlap[i][j]:
                if best_j is None or values[i][j] > best:
                    best, best_j = values[i][j], j
        delta.append(best if best_j is not None else 0.0)
        parent.append(best_j)
    labels = [None] * n
    next_label = 0
    for i in range(n):
        if delta[i] < s_c:
            labels[i] = next_label
            next_label += 1
    for i in rank:
        if labels[i] is None:
            labels[i] = labels[parent[i]]
    return rho, delta, labels


def test_clustering_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        upper = np.triu(rng.random((n, n)), 1)
        values = upper + upper.T + np.eye(n)
        flags = np.triu(rng.random((n, n)) < 0.3, 1)
        overlap = flags | flags.T | np.eye(n, dtype=bool)
        rho, delta, labels = brute_force_clusters(values, overlap, 0.5)
        result = cluster_tracklets(SimilarityMatrix(values, overlap), 0.5)
        np.testing.assert_array_equal(result.rho, rho)
        np.testing.assert_allclose(result.delta, delta)
        np.testing.assert_array_equal(result.labels, labels)


def test_centers_are_mutually_dissimilar():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        upper = np.triu(rng.random((n, n)), 1)
        values = upper + upper.T + np.eye(n)
        S = SimilarityMatrix(values, np.eye(n, dtype=bool))
        centers = cluster_tracklets(S, 0.5).centers
        for a in centers:
            for b in centers:
                if a != b:
                    assert values[a, b] < 0.5


def test_interpolation_midpoint():
    cluster = [
        Tracklet([det(1, 0.0)]),
        Tracklet([det(3, 10.0)]),
    ]
    trajectory = interpolate(cluster, track_id=7)
    assert trajectory.frames.tolist() == [1, 2, 3]
    assert trajectory.boxes[1, 0] == pytest.approx(5.0)
    assert trajectory.interpolated.tolist() == [False, True, False]
    assert trajectory.id == 7


def test_interpolation_fills_three_frame_gap():
    a = Tracklet([Detection(0, (0.0, 0.0, 4.0, 4.0), 0.8, feature=RED)])
    b = Tracklet([Detection(4, (8.0, 4.0, 8.0, 4.0), 0.6, feature=RED)])
    trajectory = interpolate([b, a])
    # corners move from (0, 0, 4, 4) to (8, 4, 16, 8)
    np.testing.assert_allclose(trajectory.boxes[1], [2.0, 1.0, 5.0, 4.0])
    np.testing.assert_allclose(trajectory.boxes[2], [4.0, 2.0, 6.0, 4.0])
    np.testing.assert_allclose(trajectory.boxes[3], [6.0, 3.0, 7.0, 4.0])
    assert trajectory.confidences[2] == pytest.approx(0.6)


def test_interpolation_without_gaps_is_concatenation():
    a, b = tracklet([0, 1]), tracklet([2, 3], left=1.0)
    trajectory = interpolate([a, b])
    np.testing.assert_array_equal(
        trajectory.boxes, np.concatenate([a.boxes, b.boxes])
    )
    assert not trajectory.interpolated.any()


def test_interpolation_rejects_overlap():
    with pytest.raises(RejectedInputError):
        interpolate([tracklet([0, 1, 2]), tracklet([2, 3])])


def test_split_overlapping_places_longest_first():
    long, short, late = tracklet([0, 1, 2, 3]), tracklet([1, 2]), tracklet([5])
    groups = split_overlapping([short, long, late])
    assert groups[0] == [long, late]
    assert groups[1] == [short]


def test_track_joins_an_occluded_object():
    dets = [det(t, float(t)) for t in range(4)]
    dets += [det(t, float(t)) for t in range(6, 10)]
    dets += [det(t, 20.0, top=20.0, feature=BLUE) for t in range(10)]
    trajectories = track(dets, TrackerConfig())
    assert len(trajectories) == 2
    moving = [t for t in trajectories if t.boxes[0, 1] == 0.0][0]
    assert moving.frames.tolist() == list(range(10))
    assert moving.interpolated.tolist() == [False] * 4 + [True] * 2 + [
        False
    ] * 4
    assert sorted(t.id for t in trajectories) == [1, 2]


def test_similarity_matrix_is_symmetric():
    tracklets = [tracklet([0, 1]), tracklet([3, 4], left=3.0), tracklet([1])]
    S = similarity_matrix(tracklets)
    np.testing.assert_allclose(S.values, S.values.T)
    np.testing.assert_array_equal(np.diag(S.values), np.ones(3))
    assert S.overlap[0, 2] and not S.overlap[0, 1]
