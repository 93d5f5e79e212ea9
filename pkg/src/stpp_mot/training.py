"""Likelihood training of the intensity model and gradient verification."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from stpp_mot import tensor as T
from stpp_mot.config import TrainConfig
from stpp_mot.errors import DataError, NumericError, RejectedInputError
from stpp_mot.model import IntensityModel
from stpp_mot.point_process import (
    EventGrid,
    EventHistory,
    log_likelihood_tensor,
)
from stpp_mot.tensor import Tape, Tensor

LOSSES = ("nll", "mse", "bce")

# Below this magnitude central differences at epsilon 1e-5 are dominated by
# round-off of the summed objective, so errors are compared absolutely.
GRADIENT_CHECK_FLOOR = 1e-4
GRADIENT_CHECK_TOLERANCE = 1e-4


@dataclass
class TrainingSample:
    """One sequence: frames and detection masks [T, H, W] plus event grids.

    Grid ``t`` must carry frame index ``t``.
    """

    frames: np.ndarray
    det_masks: np.ndarray
    event_grids: List[EventGrid]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.det_masks = np.asarray(self.det_masks, dtype=np.float64)
        if self.frames.ndim != 3 or len(self.frames) == 0:
            raise RejectedInputError(
                f"frames must be a nonempty [T,H,W] array, got "
                f"{self.frames.shape}"
            )
        if self.det_masks.shape != self.frames.shape:
            raise RejectedInputError(
                f"detection masks {self.det_masks.shape} do not match frames "
                f"{self.frames.shape}"
            )
        if len(self.event_grids) != len(self.frames):
            raise RejectedInputError(
                f"{len(self.event_grids)} event grids for "
                f"{len(self.frames)} frames"
            )
        for t, grid in enumerate(self.event_grids):
            if grid.frame != t or grid.shape != self.frames.shape[1:]:
                raise RejectedInputError(
                    f"event grid {t} has frame {grid.frame} and shape "
                    f"{grid.shape}"
                )

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.frames.shape[1:]

    def history(self) -> EventHistory:
        return EventHistory.from_grids(self.event_grids)

    def window(self, start: int, length: int) -> "TrainingSample":
        """Frames [start, start + length), re-indexed from zero."""
        if start < 0 or length < 1 or start + length > self.n_frames:
            raise RejectedInputError(
                f"window [{start}, {start + length}) outside "
                f"{self.n_frames} frames"
            )
        stop = start + length
        grids = [
            EventGrid(t - start, self.event_grids[t].cells)
            for t in range(start, stop)
        ]
        return TrainingSample(
            self.frames[start:stop], self.det_masks[start:stop], grids
        )


@dataclass
class LossTrace:
    """Objective and negative log-likelihood per executed iteration."""

    loss: List[float] = field(default_factory=list)
    nll: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def append(self, loss: float, nll: float) -> None:
        self.loss.append(float(loss))
        self.nll.append(float(nll))

    def smoothed(self, window: int = 50) -> np.ndarray:
        """Trailing moving average of the objective."""
        series = pd.Series(self.loss, dtype=np.float64)
        return series.rolling(window, min_periods=1).mean().to_numpy()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            dict(
                iteration=np.arange(len(self), dtype=np.int64),
                nll=self.nll,
                loss=self.loss,
            )
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path

    @classmethod
    def from_csv(cls, path) -> "LossTrace":
        path = Path(path)
        if not path.exists():
            raise DataError("loss trace not found", path=str(path))
        frame = pd.read_csv(path)
        missing = {"iteration", "nll", "loss"} - set(frame.columns)
        if missing:
            raise DataError(
                f"loss trace lacks columns {sorted(missing)}", path=str(path)
            )
        return cls(list(frame["loss"]), list(frame["nll"]))


def _sum_tensors(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return total


def sequence_loss(
    intensities: Sequence[Tensor],
    grids: Sequence[EventGrid],
    loss: str = "nll",
) -> Tensor:
    """Scalar training objective of one sequence.

    nll: negative discrete log-likelihood.
    mse: squared difference between intensity and the event indicator.
    bce: cross-entropy of the indicator against 1 - exp(-intensity), the
    probability of at least one event in a unit cell.
    """
    if loss == "nll":
        return T.scale(log_likelihood_tensor(intensities, grids), -1.0)
    if loss not in LOSSES:
        raise RejectedInputError(f"Unknown loss {loss}")
    terms = []
    for lam, grid in zip(intensities, grids):
        mask = grid.cells.reshape(lam.shape).astype(np.float64)
        if loss == "mse":
            diff = T.sub(lam, Tensor(mask))
            terms.append(T.sum(T.mul(diff, diff)))
            continue
        survival = T.exp(T.scale(lam, -1.0))
        probability = T.add_scalar(T.scale(survival, -1.0), 1.0)
        try:
            hits = T.sum(T.masked_log(probability, mask.astype(bool)))
        except NumericError as e:
            raise NumericError(
                "bce", "event probability underflowed", frame=grid.frame
            ) from e
        misses = T.sum(T.mul(lam, Tensor(1.0 - mask)))
        terms.append(T.sub(misses, hits))
    return _sum_tensors(terms)


def sample_loss(
    model: IntensityModel, sample: TrainingSample, loss: str = "nll"
) -> Tuple[Tensor, List[Tensor]]:
    intensities = model.forward_sequence_tensors(
        sample.frames,
        sample.det_masks,
        sample.history(),
        teacher_forcing=True,
    )
    return sequence_loss(intensities, sample.event_grids, loss), intensities


class AdamOptimizer:
    """Adaptive-moment gradient descent.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
    """

    def __init__(
        self,
        parameters: Sequence[Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.parameters]
        self._v = [np.zeros_like(p.data) for p in self.parameters]

    def step(self, learning_rate: Optional[float] = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for param, m, v in zip(self.parameters, self._m, self._v):
            if param.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * param.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * param.grad**2
            m_hat = m / correction1
            v_hat = v / correction2
            param.data -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def clip_gradients(parameters: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients to global L2 norm ``max_norm``; return the norm."""
    grads = [p.grad for p in parameters if p.grad is not None]
    norm = float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))
    if norm > max_norm:
        factor = max_norm / norm
        for grad in grads:
            grad *= factor
    return norm


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    return cfg.learning_rate * cfg.decay_factor ** (
        iteration // cfg.decay_interval
    )


def _draw_batch(
    dataset: Sequence[TrainingSample],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> List[TrainingSample]:
    batch = []
    for index in rng.integers(len(dataset), size=cfg.batch_size):
        sample = dataset[int(index)]
        if cfg.window and sample.n_frames > cfg.window:
            start = int(rng.integers(sample.n_frames - cfg.window + 1))
            sample = sample.window(start, cfg.window)
        batch.append(sample)
    return batch


def train(
    model: IntensityModel,
    dataset: Sequence[TrainingSample],
    cfg: TrainConfig,
    checkpoint_path=None,
) -> Tuple[IntensityModel, LossTrace]:
    """Fit ``model`` to the event grids of ``dataset`` in place.

    Each iteration draws ``batch_size`` samples (with replacement), averages
    their objective under one tape and takes a clipped adaptive-moment step.

    Raises:
        NumericError: A loss or gradient became non-finite; the message
            names the iteration and, when known, the frame and cell.
    """
    cfg.validate()
    if not dataset:
        raise RejectedInputError("train needs a nonempty dataset")
    shapes = {sample.grid_shape for sample in dataset}
    if len(shapes) != 1:
        raise RejectedInputError(f"samples have differing shapes {shapes}")

    rng = np.random.default_rng(cfg.seed)
    parameters = model.parameters()
    optimizer = AdamOptimizer(
        parameters, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon
    )
    trace = LossTrace()
    logging.info(
        f"Training {model.variant} model ({model.parameter_count()} "
        f"parameters) on {len(dataset)} sequences for {cfg.iterations} "
        f"iterations"
    )
    for iteration in range(cfg.iterations):
        batch = _draw_batch(dataset, cfg, rng)
        try:
            with Tape() as tape:
                losses, nlls = [], []
                for sample in batch:
                    objective, intensities = sample_loss(
                        model, sample, cfg.loss
                    )
                    losses.append(objective)
                    if cfg.loss == "nll":
                        nlls.append(objective.item())
                    else:
                        nlls.append(
                            -log_likelihood_tensor(
                                [x.detach() for x in intensities],
                                sample.event_grids,
                            ).item()
                        )
                total = T.scale(_sum_tensors(losses), 1.0 / len(batch))
                tape.backward(total, leaves=parameters)
            norm = clip_gradients(parameters, cfg.clip_norm)
            if not np.isfinite(norm):
                raise NumericError("train", "non-finite gradient norm")
        except NumericError as e:
            logging.error(f"Training aborted at iteration {iteration}: {e}")
            raise NumericError(
                "train",
                f"aborted at iteration {iteration} in {e.op}",
                frame=e.frame,
                cell=e.cell,
            ) from e
        optimizer.step(learning_rate_at(cfg, iteration))
        trace.append(total.item(), float(np.mean(nlls)))
        if iteration % cfg.log_interval == 0:
            logging.info(
                f"iteration {iteration}: loss {trace.loss[-1]:.4f}, "
                f"nll {trace.nll[-1]:.4f}, grad norm {norm:.3f}"
            )
        if (
            checkpoint_path is not None
            and cfg.checkpoint_interval
            and (iteration + 1) % cfg.checkpoint_interval == 0
        ):
            model.save(Path(f"{checkpoint_path}-{iteration + 1:06d}"))
    return model, trace


def gradient_check(
    model: IntensityModel,
    sample: TrainingSample,
    epsilon: float = 1e-5,
    loss: str = "nll",
    max_parameters: int = 10000,
    floor: float = GRADIENT_CHECK_FLOOR,
) -> float:
    """Largest relative error between analytic and central-difference
    gradients of the sequence objective, over every parameter entry.

    Errors are taken relative to max(|analytic|, |numeric|, ``floor``) so
    entries with vanishing gradient are compared absolutely.
    """
    count = model.parameter_count()
    if count > max_parameters:
        raise RejectedInputError(
            f"gradient_check is limited to {max_parameters} parameters, "
            f"model has {count}"
        )
    parameters = model.parameters()
    with Tape() as tape:
        objective, _ = sample_loss(model, sample, loss)
        tape.backward(objective, leaves=parameters)
    analytic = [p.grad.copy() for p in parameters]

    worst = 0.0
    for param, grad in zip(parameters, analytic):
        flat = param.data.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + epsilon
            plus = sample_loss(model, sample, loss)[0].item()
            flat[index] = original - epsilon
            minus = sample_loss(model, sample, loss)[0].item()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            exact = grad.reshape(-1)[index]
            scale = max(abs(exact), abs(numeric), floor)
            worst = max(worst, abs(exact - numeric) / scale)
    return worst
