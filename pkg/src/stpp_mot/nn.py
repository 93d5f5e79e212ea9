"""Parameterized layers built on the tensor engine.

Layers hold their parameters as leaf tensors with ``requires_grad`` set and
expose them through ``named_parameters`` in a fixed order, which is also the
order used by checkpoint files.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from stpp_mot import tensor as T
from stpp_mot.errors import DataError, RejectedInputError
from stpp_mot.tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1

ACTIVATION_KINDS = ("sigmoid", "biased-relu", "elu-plus-one", "softplus")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, data) -> Tensor:
        param = Tensor(data, requires_grad=True, name=name)
        self._parameters[name] = param
        return param

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        named = [(f"{prefix}{k}", v) for k, v in self._parameters.items()]
        for child_name, child in self._children.items():
            named.extend(child.named_parameters(f"{prefix}{child_name}."))
        return named

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def zero_(self) -> None:
        """Set every parameter to zero (used by degenerate configurations)."""
        for param in self.parameters():
            param.data[...] = 0.0


@dataclass(frozen=True)
class IntensityActivation:
    """Pointwise map from real scores to intensities.

    ``biased-relu`` computes epsilon + max(x, 0); ``elu-plus-one`` and
    ``softplus`` are strictly positive everywhere.
    """

    kind: str = "softplus"
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise RejectedInputError(
                f"Unknown activation {self.kind}, expected one of "
                f"{ACTIVATION_KINDS}"
            )
        if self.kind == "biased-relu" and self.epsilon <= 0:
            raise RejectedInputError("biased-relu needs epsilon > 0")

    def __call__(self, x: Tensor) -> Tensor:
        return activation_eval(self, x)


def activation_eval(sigma: IntensityActivation, x: Tensor) -> Tensor:
    if sigma.kind == "sigmoid":
        return T.sigmoid(x)
    if sigma.kind == "biased-relu":
        return T.add_scalar(T.relu(x), sigma.epsilon)
    if sigma.kind == "elu-plus-one":
        return T.elu_plus_one(x)
    return T.softplus(x)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = self.add_parameter(
            "weight", _uniform(rng, shape, fan_in)
        )
        if bias:
            self.bias = self.add_parameter(
                "bias", _uniform(rng, (out_channels,), fan_in)
            )
        else:
            self.bias = Tensor(np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding="same")


class ConvStack(Module):
    """Two same-padded convolutions with a tanh between them."""

    def __init__(
        self,
        in_channels: int,
        channels: int,
        kernel_size: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.first = self.add_child(
            "first", Conv2d(in_channels, channels, kernel_size, rng)
        )
        self.second = self.add_child(
            "second", Conv2d(channels, channels, kernel_size, rng)
        )
        self.out_channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(T.tanh(self.first(x)))


class ConvLSTMCell(Module):
    """Conv-LSTM cell with gates ordered input, forget, output, candidate.

    The forget-gate slice of the bias starts at +1.0.
    """

    def __init__(
        self,
        in_channels: int,
        hidden_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        if kernel_size % 2 == 0:
            raise RejectedInputError("ConvLSTMCell needs an odd kernel size")
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        gates = 4 * hidden_channels
        fan_in = (in_channels + hidden_channels) * kernel_size**2
        self.input_kernel = self.add_parameter(
            "input_kernel",
            _uniform(
                rng,
                (gates, in_channels, kernel_size, kernel_size),
                fan_in,
            ),
        )
        self.state_kernel = self.add_parameter(
            "state_kernel",
            _uniform(
                rng,
                (gates, hidden_channels, kernel_size, kernel_size),
                fan_in,
            ),
        )
        bias = _uniform(rng, (gates,), fan_in)
        bias[hidden_channels : 2 * hidden_channels] = 1.0
        self.bias = self.add_parameter("bias", bias)
        self._no_bias = Tensor(np.zeros(gates))

    def initial_state(self, height: int, width: int) -> Tuple[Tensor, Tensor]:
        shape = (self.hidden_channels, height, width)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def conv_lstm_step(
    cell: ConvLSTMCell, h_prev: Tensor, c_prev: Tensor, x: Tensor
) -> Tuple[Tensor, Tensor]:
    """Advance a conv-LSTM cell by one step.

    Returns:
        (h, c) with c = f * c_prev + i * g and h = o * tanh(c).
    """
    hidden = cell.hidden_channels
    expected = (hidden,) + x.shape[1:]
    if x.data.ndim != 3:
        raise RejectedInputError(f"conv_lstm_step: input shape {x.shape}")
    if h_prev.shape != expected or c_prev.shape != expected:
        raise RejectedInputError(
            f"conv_lstm_step: states {h_prev.shape}, {c_prev.shape} do not "
            f"match {expected}"
        )
    gates = T.add(
        T.conv2d(x, cell.input_kernel, cell.bias, padding="same"),
        T.conv2d(h_prev, cell.state_kernel, cell._no_bias, padding="same"),
    )
    input_gate = T.sigmoid(T.narrow(gates, 0, hidden))
    forget_gate = T.sigmoid(T.narrow(gates, hidden, 2 * hidden))
    output_gate = T.sigmoid(T.narrow(gates, 2 * hidden, 3 * hidden))
    candidate = T.tanh(T.narrow(gates, 3 * hidden, 4 * hidden))
    c = T.add(T.mul(forget_gate, c_prev), T.mul(input_gate, candidate))
    h = T.mul(output_gate, T.tanh(c))
    return h, c


class Mlp(Module):
    """Stack of affine layers, each followed by tanh or nothing."""

    def __init__(
        self,
        widths: Sequence[int],
        activations: Sequence[str],
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if len(widths) < 2 or len(activations) != len(widths) - 1:
            raise RejectedInputError(
                f"Mlp needs one activation per layer, got widths {widths} "
                f"and activations {activations}"
            )
        for name in activations:
            if name not in ("tanh", "linear"):
                raise RejectedInputError(f"Unknown Mlp activation {name}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = tuple(int(w) for w in widths)
        self.activations = tuple(activations)
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.weights.append(
                self.add_parameter(
                    f"weight{k}", _uniform(rng, (n_in, n_out), n_in)
                )
            )
            self.biases.append(
                self.add_parameter(f"bias{k}", _uniform(rng, (n_out,), n_in))
            )

    @classmethod
    def evolving(
        cls,
        in_width: int,
        hidden_width: int,
        out_width: int,
        rng: np.random.Generator,
    ) -> "Mlp":
        """Three-layer configuration used to align event features in time."""
        return cls(
            (in_width, hidden_width, hidden_width, out_width),
            ("tanh", "tanh", "linear"),
            rng,
        )

    @classmethod
    def identity(cls, in_width: int, out_width: Optional[int] = None):
        """Single linear layer passing the first ``out_width`` inputs on."""
        out_width = in_width if out_width is None else out_width
        mlp = cls((in_width, out_width), ("linear",))
        mlp.weights[0].data[...] = np.eye(in_width, out_width)
        mlp.biases[0].data[...] = 0.0
        return mlp

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)


def mlp_forward(m: Mlp, x: Tensor) -> Tensor:
    """Evaluate ``m`` on a rank-1 input or on each row of a rank-2 input."""
    if x.data.ndim not in (1, 2) or x.shape[-1] != m.in_width:
        raise RejectedInputError(
            f"mlp_forward: input shape {x.shape}, first layer expects width "
            f"{m.in_width}"
        )
    single = x.data.ndim == 1
    out = T.reshape(x, (1, m.in_width)) if single else x
    for weight, bias, activation in zip(m.weights, m.biases, m.activations):
        out = T.add_bias(T.matmul(out, weight), bias)
        if activation == "tanh":
            out = T.tanh(out)
    if single:
        out = T.reshape(out, (m.out_width,))
    return out


def save_checkpoint(
    module: Module, path, manifest_extra: Optional[dict] = None
) -> Tuple[Path, Path]:
    """Write parameters to ``<path>.ckpt`` and a manifest ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_path = path.with_suffix(".ckpt")
    manifest_path = path.with_suffix(".json")
    named = module.named_parameters()
    with open(ckpt_path, "wb") as file:
        for _, param in named:
            T.write_tensor(file, param)
    manifest = dict(manifest_extra or {})
    manifest["format_version"] = CHECKPOINT_FORMAT_VERSION
    manifest["parameters"] = [
        dict(name=name, shape=list(param.shape)) for name, param in named
    ]
    with open(manifest_path, "w") as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
        file.write("\n")
    logging.info(f"Wrote checkpoint {ckpt_path}")
    return ckpt_path, manifest_path


def read_manifest(path) -> dict:
    manifest_path = Path(path).with_suffix(".json")
    if not manifest_path.exists():
        raise DataError("checkpoint manifest not found", path=manifest_path)
    with open(manifest_path, "r") as file:
        return json.load(file)


def load_checkpoint(module: Module, path) -> dict:
    """Fill ``module`` parameters from a checkpoint; return its manifest."""
    manifest = read_manifest(path)
    ckpt_path = Path(path).with_suffix(".ckpt")
    named = module.named_parameters()
    names = [entry["name"] for entry in manifest["parameters"]]
    if names != [name for name, _ in named]:
        raise DataError(
            "checkpoint parameters do not match the model", path=ckpt_path
        )
    with open(ckpt_path, "rb") as file:
        for name, param in named:
            try:
                stored = T.read_tensor(file)
            except EOFError as e:
                raise DataError(str(e), path=ckpt_path) from e
            if stored.shape != param.shape:
                raise DataError(
                    f"parameter {name} has shape {stored.shape}, expected "
                    f"{param.shape}",
                    path=ckpt_path,
                )
            param.data[...] = stored.data
    return manifest
