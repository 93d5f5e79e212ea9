import dataclasses

import numpy as np
import pytest

from stpp_mot.config import ModelConfig, TrainConfig
from stpp_mot.errors import NumericError, RejectedInputError
from stpp_mot.model import IntensityModel
from stpp_mot.point_process import EventGrid
from stpp_mot.tensor import Tensor
from stpp_mot.training import (
    GRADIENT_CHECK_TOLERANCE,
    AdamOptimizer,
    LossTrace,
    TrainingSample,
    clip_gradients,
    gradient_check,
    learning_rate_at,
    sequence_loss,
    train,
)

GRID = np.array([[1, 0], [0, 0]])


def test_nll_loss_is_negative_log_likelihood():
    loss = sequence_loss([Tensor(np.ones((1, 2, 2)))], [EventGrid(0, GRID)])
    assert loss.item() == pytest.approx(3.0)


def test_mse_loss():
    lam = Tensor(np.full((1, 2, 2), 0.5))
    loss = sequence_loss([lam], [EventGrid(0, GRID)], loss="mse")
    assert loss.item() == pytest.approx(4 * 0.25)


def test_bce_loss():
    lam = Tensor(np.full((1, 2, 2), 2.0))
    loss = sequence_loss([lam], [EventGrid(0, GRID)], loss="bce")
    expected = 3 * 2.0 - np.log(1.0 - np.exp(-2.0))
    assert loss.item() == pytest.approx(expected)


def test_unknown_loss_is_rejected():
    with pytest.raises(RejectedInputError):
        sequence_loss([Tensor(np.ones((1, 2, 2)))], [EventGrid(0, GRID)], "l1")


def test_adam_first_step_moves_by_learning_rate():
    param = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    param.grad = np.array([0.5, -3.0])
    AdamOptimizer([param], learning_rate=0.1).step()
    np.testing.assert_allclose(param.data, [0.9, -1.9], atol=1e-6)


def test_clip_gradients_rescales_to_global_norm():
    a = Tensor(np.zeros(1), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_gradients([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])
    assert clip_gradients([a, b], 5.0) == pytest.approx(1.0)


def test_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=1e-3, decay_factor=0.1, decay_interval=800)
    assert learning_rate_at(cfg, 799) == pytest.approx(1e-3)
    assert learning_rate_at(cfg, 800) == pytest.approx(1e-4)
    assert learning_rate_at(cfg, 1600) == pytest.approx(1e-5)


def test_sample_window_reindexes_frames():
    frames = np.zeros((5, 2, 2))
    grids = [EventGrid(t, np.eye(2, dtype=int) * (t % 2)) for t in range(5)]
    sample = TrainingSample(frames, frames.copy(), grids)
    window = sample.window(2, 3)
    assert [g.frame for g in window.event_grids] == [0, 1, 2]
    np.testing.assert_array_equal(window.event_grids[1].cells, np.eye(2))
    with pytest.raises(RejectedInputError):
        sample.window(4, 2)


def test_sample_rejects_misnumbered_grids():
    frames = np.zeros((2, 2, 2))
    with pytest.raises(RejectedInputError):
        TrainingSample(
            frames, frames, [EventGrid(1, GRID), EventGrid(0, GRID)]
        )


def single_event_sample():
    frame = np.zeros((1, 4, 4))
    frame[0, 1, 2] = 1.0
    cells = np.zeros((4, 4), dtype=int)
    cells[1, 2] = 1
    return TrainingSample(frame, frame.copy(), [EventGrid(0, cells)])


def test_single_event_toy_converges_to_event_cell():
    sample = single_event_sample()
    model = IntensityModel(
        ModelConfig(variant="sync", feature_channels=4), seed=0
    )
    cfg = TrainConfig(
        learning_rate=0.05, batch_size=1, iterations=500, window=0
    )
    model, trace = train(model, [sample], cfg)
    lam = model.forward_sequence(sample.frames, sample.det_masks)[0].values
    assert np.unravel_index(np.argmax(lam), lam.shape) == (1, 2)
    assert trace.nll[-1] < trace.nll[0]


def test_training_is_reproducible(tmp_path):
    sample = single_event_sample()
    cfg = TrainConfig(batch_size=2, iterations=5, window=0)
    traces = []
    for _ in range(2):
        model = IntensityModel(ModelConfig(variant="sync"), seed=1)
        traces.append(train(model, [sample], cfg)[1])
    assert traces[0].loss == traces[1].loss


def test_training_writes_periodic_checkpoints(tmp_path):
    cfg = TrainConfig(iterations=4, window=0, checkpoint_interval=2)
    model = IntensityModel(ModelConfig(variant="timeindep"))
    train(model, [single_event_sample()], cfg, tmp_path / "ckpt")
    assert (tmp_path / "ckpt-000002.ckpt").exists()
    assert (tmp_path / "ckpt-000004.json").exists()


def test_zero_intensity_at_event_aborts_training():
    model = IntensityModel(
        ModelConfig(variant="timeindep", activation="sigmoid")
    )
    model.zero_()
    # sigmoid of a very negative score underflows to exactly zero
    model.head.w_s.bias.data[...] = -800.0
    cfg = TrainConfig(iterations=3, window=0)
    with pytest.raises(NumericError) as info:
        train(model, [single_event_sample()], cfg)
    assert "iteration 0" in str(info.value)
    assert info.value.frame == 0
    assert info.value.cell == (1, 2)


def test_loss_trace_csv_round_trip(tmp_path):
    trace = LossTrace()
    for k in range(5):
        trace.append(10.0 - k, 9.5 - k)
    path = trace.to_csv(tmp_path / "trace.csv")
    loaded = LossTrace.from_csv(path)
    assert loaded.loss == trace.loss and loaded.nll == trace.nll
    np.testing.assert_allclose(trace.smoothed(2), [10, 9.5, 8.5, 7.5, 6.5])


@pytest.mark.parametrize("loss", ["mse", "bce"])
def test_alternative_losses_pass_gradient_check(loss, small_model_config):
    cfg = dataclasses.replace(small_model_config, variant="sync")
    rng = np.random.default_rng(2)
    frames = rng.random((2, 4, 4))
    cells = (rng.random((2, 4, 4)) < 0.3).astype(int)
    sample = TrainingSample(
        frames,
        (frames > 0.5).astype(float),
        [EventGrid(t, cells[t]) for t in range(2)],
    )
    model = IntensityModel(cfg, seed=3)
    assert gradient_check(model, sample, loss=loss) < GRADIENT_CHECK_TOLERANCE


def test_gradient_check_refuses_large_models():
    model = IntensityModel(ModelConfig())
    with pytest.raises(RejectedInputError):
        gradient_check(model, single_event_sample(), max_parameters=10)
