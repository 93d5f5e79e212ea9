import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stpp_mot.errors import DataError, NumericError, RejectedInputError
from stpp_mot.point_process import (
    Event,
    EventGrid,
    EventHistory,
    IntensityMap,
    counting_function,
    log_likelihood,
    log_likelihood_tensor,
    predict_events,
    read_event_grids,
    write_event_grids,
)
from stpp_mot.tensor import Tensor


def loop_log_likelihood(intensities, grids):
    total = 0.0
    for lam, grid in zip(intensities, grids):
        height, width = grid.shape
        for y in range(height):
            for x in range(width):
                value = lam.values[y, x]
                if grid.cells[y, x]:
                    total += np.log(value)
                else:
                    total -= value
    return total


def test_hand_case_likelihood():
    lam = IntensityMap(0, np.ones((2, 2)))
    grid = EventGrid(0, np.array([[1, 0], [0, 0]]))
    assert log_likelihood([lam], [grid]) == -3.0


def test_likelihood_matches_loop_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_frames = rng.integers(1, 4)
        height, width = rng.integers(1, 5, size=2)
        maps, grids = [], []
        for t in range(n_frames):
            maps.append(
                IntensityMap(t, rng.uniform(0.01, 3.0, (height, width)))
            )
            grids.append(
                EventGrid(t, (rng.random((height, width)) < 0.3) * 1)
            )
        assert log_likelihood(maps, grids) == pytest.approx(
            loop_log_likelihood(maps, grids), abs=1e-10
        )


def test_zero_intensity_without_events_is_zero():
    lam = IntensityMap(0, np.zeros((3, 3)))
    assert log_likelihood([lam], [EventGrid.empty(0, 3, 3)]) == 0.0


def test_zero_intensity_at_event_names_frame_and_cell():
    values = np.ones((2, 3))
    values[1, 2] = 0.0
    grid = EventGrid(4, np.array([[0, 0, 0], [0, 0, 1]]))
    with pytest.raises(NumericError) as info:
        log_likelihood([IntensityMap(4, values)], [grid])
    assert info.value.frame == 4
    assert info.value.cell == (1, 2)


def test_shape_mismatch_is_rejected():
    with pytest.raises(RejectedInputError):
        log_likelihood(
            [IntensityMap(0, np.ones((2, 2)))], [EventGrid.empty(0, 3, 2)]
        )


def test_tensor_likelihood_agrees_with_array_version():
    rng = np.random.default_rng(1)
    maps = [IntensityMap(t, rng.uniform(0.1, 2, (3, 4))) for t in range(3)]
    grids = [EventGrid(t, rng.integers(0, 2, (3, 4))) for t in range(3)]
    tensors = [Tensor(m.values[None]) for m in maps]
    assert log_likelihood_tensor(tensors, grids).item() == pytest.approx(
        log_likelihood(maps, grids), abs=1e-12
    )


def test_counting_function():
    events = [Event(0, 1, 1), Event(1, 0, 0), Event(2, 3, 3)]
    assert counting_function(events, 1, 1, 1) == 2
    assert counting_function(events, 0, 0, 0) == 0
    assert counting_function(events, 5, 5, 5) == 3


def test_grid_events_round_trip():
    events = [Event(2, 0, 1), Event(2, 3, 0)]
    grid = EventGrid.from_events(2, events, height=2, width=4)
    assert sorted(grid.to_events()) == sorted(events)
    with pytest.raises(RejectedInputError):
        EventGrid.from_events(3, events, height=2, width=4)


def test_history_keeps_nonempty_frames_and_gaps():
    grids = [
        EventGrid(t, np.eye(2) if t in (2, 5) else np.zeros((2, 2)))
        for t in range(6)
    ]
    history = EventHistory.from_grids(grids)
    assert history.frames == [2, 5]
    assert history.gaps == [2, 3]
    assert history.grid_at(5) is not None and history.grid_at(3) is None


def test_threshold_prediction():
    lam = IntensityMap(0, np.array([[0.2, 0.5], [0.7, 0.0]]))
    grid = predict_events(lam, tau_e=0.5)
    np.testing.assert_array_equal(grid.cells, [[0, 1], [1, 0]])
    never = predict_events(IntensityMap(0, np.zeros((2, 2))), tau_e=0.0)
    assert never.is_empty()


@given(
    arrays(np.float64, (3, 3), elements=st.floats(0, 2)),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_threshold_prediction_is_monotone(values, tau_a, tau_b):
    low, high = sorted((tau_a, tau_b))
    lam = IntensityMap(0, values)
    high_cells = predict_events(lam, tau_e=high).cells
    low_cells = predict_events(lam, tau_e=low).cells
    assert np.all(high_cells <= low_cells)


def test_bernoulli_prediction_is_seeded():
    lam = IntensityMap(0, np.full((8, 8), 0.5))
    a = predict_events(lam, mode="bernoulli", rng=3)
    b = predict_events(lam, mode="bernoulli", rng=3)
    np.testing.assert_array_equal(a.cells, b.cells)
    certain = predict_events(
        IntensityMap(0, np.full((2, 2), 4.0)), mode="bernoulli", rng=0
    )
    assert certain.count == 4


def test_event_grid_file_format(tmp_path):
    grid = EventGrid(7, np.array([[1, 1, 0, 1], [0, 0, 0, 0]]))
    path = write_event_grids(tmp_path / "events.txt", [grid])
    assert path.read_text() == "7 2 4\n0 2 1 1\n4\n"
    (loaded,) = read_event_grids(path)
    assert loaded.frame == 7
    np.testing.assert_array_equal(loaded.cells, grid.cells)


def test_bad_run_lengths_report_line(tmp_path):
    path = tmp_path / "events.txt"
    path.write_text("0 2 3\n1 2\n2 2\n")
    with pytest.raises(DataError) as info:
        read_event_grids(path)
    assert info.value.line == 3
