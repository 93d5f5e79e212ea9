import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stpp_mot import nn
from stpp_mot.errors import DataError, RejectedInputError
from stpp_mot.model import align, align_decay
from stpp_mot.tensor import Tensor


@pytest.mark.parametrize("kind", ["softplus", "elu-plus-one", "biased-relu"])
def test_intensity_activations_are_positive_on_random_inputs(kind):
    x = np.random.default_rng(0).normal(scale=30.0, size=10_000)
    out = nn.IntensityActivation(kind)(Tensor(x)).data
    assert np.all(out > 0)


@given(
    arrays(
        np.float64,
        (16,),
        elements=st.floats(-700, 700, allow_nan=False),
    )
)
def test_softplus_and_elu_plus_one_stay_positive(x):
    for kind in ("softplus", "elu-plus-one"):
        assert np.all(nn.IntensityActivation(kind)(Tensor(x)).data > 0)


def test_biased_relu_adds_epsilon():
    sigma = nn.IntensityActivation("biased-relu", epsilon=0.01)
    out = sigma(Tensor(np.array([-5.0, 0.0, 2.0]))).data
    np.testing.assert_allclose(out, [0.01, 0.01, 2.01])


def test_unknown_activation_is_rejected():
    with pytest.raises(RejectedInputError):
        nn.IntensityActivation("gelu")


def test_forget_gate_bias_starts_at_one():
    cell = nn.ConvLSTMCell(2, 3, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(cell.bias.data[3:6], np.ones(3))


def test_conv_lstm_step_follows_gate_equations():
    cell = nn.ConvLSTMCell(1, 2, 3, np.random.default_rng(1))
    cell.input_kernel.data[...] = 0.0
    cell.state_kernel.data[...] = 0.0
    # Gates i, f, o, g reduce to their biases
    cell.bias.data[...] = [0.5, 0.5, 1.0, 1.0, -1.0, -1.0, 0.2, 0.2]
    x = Tensor(np.ones((1, 4, 4)))
    h_prev = Tensor(np.zeros((2, 4, 4)))
    c_prev = Tensor(np.full((2, 4, 4), 0.3))
    h, c = nn.conv_lstm_step(cell, h_prev, c_prev, x)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    expected_c = sig(1.0) * 0.3 + sig(0.5) * np.tanh(0.2)
    np.testing.assert_allclose(c.data, expected_c)
    np.testing.assert_allclose(h.data, sig(-1.0) * np.tanh(expected_c))


def test_conv_lstm_step_rejects_state_shape_mismatch():
    cell = nn.ConvLSTMCell(1, 2, 3, np.random.default_rng(0))
    x = Tensor(np.ones((1, 4, 4)))
    with pytest.raises(RejectedInputError):
        nn.conv_lstm_step(
            cell, Tensor(np.zeros((2, 5, 4))), Tensor(np.zeros((2, 4, 4))), x
        )


def test_even_kernel_is_rejected():
    with pytest.raises(RejectedInputError):
        nn.ConvLSTMCell(1, 2, 2, np.random.default_rng(0))


def test_mlp_forward_on_rows_and_single_vector():
    mlp = nn.Mlp((3, 4, 2), ("tanh", "linear"), np.random.default_rng(0))
    rows = np.random.default_rng(1).normal(size=(5, 3))
    batch = nn.mlp_forward(mlp, Tensor(rows)).data
    single = nn.mlp_forward(mlp, Tensor(rows[2])).data
    assert batch.shape == (5, 2)
    np.testing.assert_allclose(single, batch[2])
    with pytest.raises(RejectedInputError):
        nn.mlp_forward(mlp, Tensor(np.ones(4)))


def test_identity_alignment_returns_event_features():
    h_e = Tensor(np.random.default_rng(2).normal(size=(3, 4, 5)))
    aligned = align(nn.Mlp.identity(4, 3), h_e, elapsed=7.0)
    np.testing.assert_allclose(aligned.data, h_e.data)


def test_decay_alignment():
    h_e = Tensor(np.ones((2, 3, 3)))
    np.testing.assert_allclose(
        align_decay(h_e, 2.0, 1.0).data, np.full((2, 3, 3), np.exp(-2.0))
    )
    np.testing.assert_allclose(align_decay(h_e, 0.0, 1.0).data, h_e.data)
    with pytest.raises(RejectedInputError):
        align_decay(h_e, -1.0, 1.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    source = nn.ConvStack(2, 3, 3, rng)
    target = nn.ConvStack(2, 3, 3, np.random.default_rng(5))
    ckpt, manifest = nn.save_checkpoint(source, tmp_path / "stack")
    assert ckpt.name == "stack.ckpt" and manifest.name == "stack.json"
    nn.load_checkpoint(target, tmp_path / "stack")
    for (name, a), (_, b) in zip(
        source.named_parameters(), target.named_parameters()
    ):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)


def test_checkpoint_of_other_architecture_is_rejected(tmp_path):
    nn.save_checkpoint(
        nn.ConvStack(2, 3, 3, np.random.default_rng(0)), tmp_path / "a"
    )
    other = nn.Mlp((2, 2), ("linear",))
    with pytest.raises(DataError):
        nn.load_checkpoint(other, tmp_path / "a")


def test_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        nn.read_manifest(tmp_path / "absent")


def test_activation_values_at_zero():
    zero = Tensor(np.zeros(1))
    assert nn.IntensityActivation("softplus")(zero).data[0] == pytest.approx(
        np.log(2.0)
    )
    assert nn.IntensityActivation("elu-plus-one")(zero).data[0] == 1.0


def test_zero_weight_mlp_returns_output_bias():
    mlp = nn.Mlp((3, 4, 2), ("tanh", "linear"))
    mlp.zero_()
    mlp.biases[-1].data[...] = [0.5, -1.5]
    out = nn.mlp_forward(mlp, Tensor(np.array([1.0, 2.0, 3.0]))).data
    np.testing.assert_array_equal(out, [0.5, -1.5])


def test_mlp_matches_loop_evaluation():
    mlp = nn.Mlp.evolving(3, 4, 2, np.random.default_rng(6))
    x = np.array([0.3, -0.2, 1.1])
    value = x
    for weight, bias, act in zip(mlp.weights, mlp.biases, mlp.activations):
        out = np.zeros(weight.shape[1])
        for j in range(weight.shape[1]):
            out[j] = bias.data[j] + sum(
                value[i] * weight.data[i, j] for i in range(weight.shape[0])
            )
        value = np.tanh(out) if act == "tanh" else out
    np.testing.assert_allclose(nn.mlp_forward(mlp, Tensor(x)).data, value)


def test_saturated_forget_gate_keeps_cell_state():
    cell = nn.ConvLSTMCell(1, 1, 3, np.random.default_rng(0))
    cell.zero_()
    # i = sigmoid(-50) ~ 0, f = sigmoid(50) ~ 1
    cell.bias.data[...] = [-50.0, 50.0, 0.0, 0.0]
    c_prev = Tensor(np.full((1, 3, 3), 0.7))
    _, c = nn.conv_lstm_step(
        cell, Tensor(np.zeros((1, 3, 3))), c_prev, Tensor(np.ones((1, 3, 3)))
    )
    np.testing.assert_allclose(c.data, c_prev.data, atol=1e-10)
