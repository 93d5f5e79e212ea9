"""Dense float64 tensors with reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a ``Tape`` is active, every
operation whose inputs require gradients appends a node to it; calling
``Tape.backward`` on a scalar walks the nodes in reverse and populates the
``grad`` of every leaf seen on the tape.

Convolutions use cross-correlation semantics (the kernel is not flipped).
Broadcasting is limited to bias addition.
"""

import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO, Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from stpp_mot.errors import NumericError, RejectedInputError

_LOCAL = threading.local()


class Tensor:
    """N-dimensional float64 array with an optional gradient.

    Attributes:
        data: numpy float64 array holding the values.
        grad: numpy array of the same shape, or None before backward.
        requires_grad: Whether operations on this tensor are recorded.
        is_leaf: False for tensors produced by a recorded operation.
        name: Optional label used by checkpoints and diagnostics.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise RejectedInputError(
                f"item() needs a single-element tensor, got {self.shape}"
            )
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Node:
    """One recorded operation.

    ``backward`` maps the gradient of the output to a tuple of gradients,
    one per input (None where an input needs no gradient).
    """

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; tapes nest per thread. The tape is consumed
    by ``backward`` and must be rebuilt for the next step.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _tape_stack().pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(
        self, root: Tensor, leaves: Sequence[Tensor] = ()
    ) -> None:
        """Populate ``grad`` on every leaf with d(root)/d(leaf).

        Args:
            root: Single-element tensor produced through this tape.
            leaves: Extra leaves to give a zero gradient when unreachable.
        """
        if root.size != 1:
            raise RejectedInputError(
                f"backward needs a scalar root, got shape {root.shape}"
            )
        grads = {id(root): np.ones_like(root.data)}
        found = {id(leaf): leaf for leaf in leaves}
        for node in reversed(self.nodes):
            for tensor in node.inputs:
                if tensor.is_leaf and tensor.requires_grad:
                    found.setdefault(id(tensor), tensor)
            grad_out = grads.pop(id(node.output), None)
            if grad_out is None:
                continue
            input_grads = node.backward(grad_out)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
        for key, leaf in found.items():
            grad = grads.get(key)
            if grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            else:
                leaf.grad = np.array(grad, dtype=np.float64).reshape(
                    leaf.shape
                )
        self.nodes = []


def _tape_stack() -> List[Tape]:
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _finish(
    op: str,
    value: np.ndarray,
    inputs: Tuple[Tensor, ...],
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(op)
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(Node(op, inputs, out, backward))
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise RejectedInputError(
            f"{op}: shape mismatch {a.shape} vs {b.shape}"
        )


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _finish(
        "mul",
        a_data * b_data,
        (a, b),
        lambda g: (g * b_data, g * a_data),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _finish("scale", a.data * factor, (a,), lambda g: (g * factor,))


def add_scalar(a: Tensor, value: float) -> Tensor:
    return _finish("add_scalar", a.data + value, (a,), lambda g: (g,))


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.data)
    return _finish("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _finish("tanh", out, (a,), lambda g: (g * (1 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _finish("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log", "log of non-positive value")
    x = a.data
    return _finish("log", np.log(x), (a,), lambda g: (g / x,))


def softplus(a: Tensor) -> Tensor:
    """log(exp(x) + 1), evaluated as x + log(1 + exp(-x)) for x > 0."""
    x = a.data
    positive = x + np.log1p(np.exp(-np.abs(x)))
    negative = np.log1p(np.exp(np.minimum(x, 0)))
    out = np.where(x > 0, positive, negative)
    slope = special.expit(x)
    return _finish("softplus", out, (a,), lambda g: (g * slope,))


def elu_plus_one(a: Tensor) -> Tensor:
    """elu(x) + 1, evaluated as exp(x) for x < 0 so it stays positive."""
    x = a.data
    below = np.exp(np.minimum(x, 0))
    out = np.where(x >= 0, x + 1.0, below)
    slope = np.where(x >= 0, 1.0, below)
    return _finish("elu_plus_one", out, (a,), lambda g: (g * slope,))


def relu(a: Tensor) -> Tensor:
    x = a.data
    slope = (x > 0).astype(np.float64)
    return _finish("relu", x * slope, (a,), lambda g: (g * slope,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Apply one of add, sub, mul, sigmoid or tanh pointwise."""
    if op not in _ELEMENTWISE:
        raise RejectedInputError(f"Unknown elementwise op {op}")
    if op in ("add", "sub", "mul"):
        if b is None:
            raise RejectedInputError(f"{op} needs two operands")
        return _ELEMENTWISE[op](a, b)
    return _ELEMENTWISE[op](a)


def sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _finish(
        "sum",
        np.array(a.data.sum()),
        (a,),
        lambda g: (np.full(shape, float(np.asarray(g).reshape(-1)[0])),),
    )


def masked_log(a: Tensor, mask: np.ndarray) -> Tensor:
    """log(a) on cells where ``mask`` is 1, zero elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise RejectedInputError(
            f"masked_log: mask shape {mask.shape} vs {a.shape}"
        )
    bad = mask & (a.data <= 0)
    if np.any(bad):
        index = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericError(
            "masked_log",
            f"log of non-positive value {a.data[index]} at index {index}",
        )
    safe = np.where(mask, a.data, 1.0)
    out = np.where(mask, np.log(safe), 0.0)
    inverse = np.where(mask, 1.0 / safe, 0.0)
    return _finish("masked_log", out, (a,), lambda g: (g * inverse,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise RejectedInputError(
            f"matmul needs rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise RejectedInputError(
            f"matmul: inner dimensions differ {a.shape} x {b.shape}"
        )
    a_data, b_data = a.data, b.data
    return _finish(
        "matmul",
        a_data @ b_data,
        (a, b),
        lambda g: (g @ b_data.T, a_data.T @ g),
    )


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a [F] bias to every row of a [N, F] tensor."""
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise RejectedInputError(
            f"add_bias: cannot add bias {bias.shape} to {x.shape}"
        )
    return _finish(
        "add_bias",
        x.data + bias.data[None, :],
        (x, bias),
        lambda g: (g, g.sum(axis=0)),
    )


def conv2d(
    x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same"
) -> Tensor:
    """Cross-correlate a [C, H, W] input with a [F, C, kH, kW] kernel.

    Same padding fills a zero border so the output keeps H and W; valid
    padding shrinks the output to (H - kH + 1, W - kW + 1).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise RejectedInputError(
            f"conv2d: expected [C,H,W] and [F,C,kH,kW], got {x.shape} "
            f"and {kernel.shape}"
        )
    n_filters, channels, k_h, k_w = kernel.shape
    if x.shape[0] != channels:
        raise RejectedInputError(
            f"conv2d: input has {x.shape[0]} channels, kernel expects "
            f"{channels}"
        )
    if bias.shape != (n_filters,):
        raise RejectedInputError(
            f"conv2d: bias shape {bias.shape}, expected ({n_filters},)"
        )
    if padding == "same":
        if k_h % 2 == 0 or k_w % 2 == 0:
            raise RejectedInputError(
                "conv2d: same padding needs odd kernel extents"
            )
        pad_h, pad_w = k_h // 2, k_w // 2
    elif padding == "valid":
        pad_h, pad_w = 0, 0
    else:
        raise RejectedInputError(f"conv2d: unknown padding {padding}")

    _, height, width = x.shape
    padded = np.pad(x.data, ((0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    if padded.shape[1] < k_h or padded.shape[2] < k_w:
        raise RejectedInputError("conv2d: kernel larger than input")
    # [C, Ho, Wo, kH, kW]
    windows = sliding_window_view(padded, (k_h, k_w), axis=(1, 2))
    weights = kernel.data
    out = np.tensordot(windows, weights, axes=([0, 3, 4], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(2, 0, 1))
    out += bias.data[:, None, None]
    out_h, out_w = out.shape[1:]

    def backward(g):
        grad_kernel = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        grad_bias = g.sum(axis=(1, 2))
        grad_padded = np.zeros_like(padded)
        for i in range(k_h):
            for j in range(k_w):
                grad_padded[:, i : i + out_h, j : j + out_w] += np.tensordot(
                    weights[:, :, i, j], g, axes=([0], [0])
                )
        grad_x = grad_padded[:, pad_h : pad_h + height, pad_w : pad_w + width]
        return grad_x, grad_kernel, grad_bias

    return _finish("conv2d", out, (x, kernel, bias), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise RejectedInputError("concat needs at least one tensor")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise RejectedInputError("concat: rank mismatch")
        others = [d for k, d in enumerate(t.shape) if k != axis]
        first = [d for k, d in enumerate(tensors[0].shape) if k != axis]
        if others != first:
            raise RejectedInputError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ "
                f"off axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _finish("concat", out, tensors, backward)


def narrow(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``a[start:stop]`` along the first axis."""
    if not 0 <= start < stop <= a.shape[0]:
        raise RejectedInputError(
            f"narrow: invalid range [{start}, {stop}) for {a.shape}"
        )
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _finish("narrow", a.data[start:stop].copy(), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise RejectedInputError(f"reshape: {e}") from e
    return _finish(
        "reshape", out.copy(), (a,), lambda g: (g.reshape(original),)
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise RejectedInputError(f"transpose needs rank 2, got {a.shape}")
    return _finish(
        "transpose",
        np.ascontiguousarray(a.data.T),
        (a,),
        lambda g: (g.T,),
    )


def write_tensor(file: BinaryIO, tensor: Tensor) -> None:
    """Write rank, extents (uint32 LE) and row-major float64 LE data."""
    data = np.ascontiguousarray(tensor.data, dtype="<f8")
    file.write(struct.pack("<I", data.ndim))
    file.write(struct.pack(f"<{data.ndim}I", *data.shape))
    file.write(data.tobytes(order="C"))


def read_tensor(file: BinaryIO) -> Tensor:
    header = file.read(4)
    if len(header) != 4:
        raise EOFError("No tensor record left")
    (rank,) = struct.unpack("<I", header)
    extents = struct.unpack(f"<{rank}I", file.read(4 * rank))
    count = int(np.prod(extents)) if rank else 1
    payload = file.read(8 * count)
    if len(payload) != 8 * count:
        raise EOFError("Truncated tensor record")
    data = np.frombuffer(payload, dtype="<f8").reshape(extents)
    return Tensor(data.astype(np.float64))
