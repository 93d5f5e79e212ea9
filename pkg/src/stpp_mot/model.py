"""Two-stream intensity model for bad-detection events.

The synchronous stream reads every frame (occupancy raster plus detection
mask). The asynchronous stream only advances on frames that hold events and
reads the event mask together with the inter-event gap. Its last state is
aligned to the current frame by the evolving function and both streams are
merged by 1x1 convolutions into a per-pixel intensity.

Variants:
    timeindep: conv features of the current frame only, no recurrence.
    sync: synchronous stream only.
    syncasync: both streams.
"""

import dataclasses
import logging
from typing import List, Optional, Sequence

import numpy as np

from stpp_mot import nn
from stpp_mot import tensor as T
from stpp_mot.config import ModelConfig, canonical_variant
from stpp_mot.errors import RejectedInputError
from stpp_mot.point_process import (
    EventGrid,
    EventHistory,
    IntensityMap,
    predict_events,
)
from stpp_mot.tensor import Tensor


def _check_binary(name: str, mask: Tensor) -> None:
    if not np.all((mask.data == 0) | (mask.data == 1)):
        raise RejectedInputError(f"{name} must be binary")


class SyncStream(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.psi = self.add_child(
            "psi",
            nn.ConvStack(2, cfg.feature_channels, cfg.kernel_size, rng),
        )
        self.cell = self.add_child(
            "cell",
            nn.ConvLSTMCell(
                cfg.feature_channels,
                cfg.hidden_channels,
                cfg.kernel_size,
                rng,
            ),
        )
        self.h = None
        self.c = None

    def reset(self, height: int, width: int) -> None:
        self.h, self.c = self.cell.initial_state(height, width)


class AsyncStream(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.psi = self.add_child(
            "psi",
            nn.ConvStack(2, cfg.feature_channels, cfg.kernel_size, rng),
        )
        self.cell = self.add_child(
            "cell",
            nn.ConvLSTMCell(
                cfg.feature_channels,
                cfg.hidden_channels,
                cfg.kernel_size,
                rng,
            ),
        )
        self.h = None
        self.c = None
        self.last_event_frame = 0

    def reset(self, height: int, width: int) -> None:
        self.h, self.c = self.cell.initial_state(height, width)
        self.last_event_frame = 0


class IntensityHead(nn.Module):
    """sigma(w_s * h_s + w_e * h_e) with 1x1 kernels; w_s carries a bias."""

    def __init__(
        self,
        sync_channels: int,
        event_channels: Optional[int],
        activation: nn.IntensityActivation,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.w_s = self.add_child(
            "w_s", nn.Conv2d(sync_channels, 1, 1, rng, bias=True)
        )
        self.w_s.bias.data[...] = 0.0
        self.w_e = None
        if event_channels is not None:
            self.w_e = self.add_child(
                "w_e", nn.Conv2d(event_channels, 1, 1, rng, bias=False)
            )
        self.activation = activation


def sync_step(s: SyncStream, frame: Tensor, det_mask: Tensor) -> Tensor:
    """Advance the synchronous stream on one frame; return the new h_s."""
    if frame.data.ndim != 3 or frame.shape[0] != 1:
        raise RejectedInputError(f"frame must be [1,H,W], got {frame.shape}")
    if det_mask.shape != frame.shape:
        raise RejectedInputError(
            f"detection mask {det_mask.shape} does not match frame "
            f"{frame.shape}"
        )
    _check_binary("detection mask", det_mask)
    if s.h is None or s.h.shape[1:] != frame.shape[1:]:
        s.reset(*frame.shape[1:])
    features = s.psi(T.concat([frame, det_mask], axis=0))
    s.h, s.c = nn.conv_lstm_step(s.cell, s.h, s.c, features)
    return s.h


def async_input(event_mask: Tensor, gap: int) -> Tensor:
    """Stack the event mask with a constant plane holding the gap."""
    gap_plane = Tensor(np.full(event_mask.shape, float(gap)))
    return T.concat([event_mask, gap_plane], axis=0)


def async_step(a: AsyncStream, event_mask: Tensor, gap: int) -> Tensor:
    """Advance the asynchronous stream on an event frame; return h_e."""
    if event_mask.data.ndim != 3 or event_mask.shape[0] != 1:
        raise RejectedInputError(
            f"event mask must be [1,H,W], got {event_mask.shape}"
        )
    _check_binary("event mask", event_mask)
    if not np.any(event_mask.data):
        raise RejectedInputError(
            "async_step needs a nonempty event mask; the stream only "
            "advances on event frames"
        )
    if gap < 1:
        raise RejectedInputError(f"gap must be >= 1, got {gap}")
    if a.h is None or a.h.shape[1:] != event_mask.shape[1:]:
        a.reset(*event_mask.shape[1:])
    features = a.psi(async_input(event_mask, gap))
    a.h, a.c = nn.conv_lstm_step(a.cell, a.h, a.c, features)
    return a.h


def align(psi3: nn.Mlp, h_e: Tensor, elapsed: float) -> Tensor:
    """Apply the evolving MLP to [channels at pixel, elapsed] per pixel."""
    if elapsed < 0:
        raise RejectedInputError(f"elapsed must be >= 0, got {elapsed}")
    channels, height, width = h_e.shape
    if psi3.in_width != channels + 1:
        raise RejectedInputError(
            f"evolving MLP expects width {psi3.in_width}, features have "
            f"{channels} channels plus elapsed time"
        )
    pixels = T.transpose(T.reshape(h_e, (channels, height * width)))
    elapsed_column = Tensor(np.full((height * width, 1), float(elapsed)))
    aligned = nn.mlp_forward(
        psi3, T.concat([pixels, elapsed_column], axis=1)
    )
    return T.reshape(T.transpose(aligned), (psi3.out_width, height, width))


def align_decay(h_e: Tensor, elapsed: float, decay_scale: float) -> Tensor:
    """Parametric alternative: h_e * exp(-elapsed / decay_scale)."""
    if elapsed < 0:
        raise RejectedInputError(f"elapsed must be >= 0, got {elapsed}")
    return T.scale(h_e, float(np.exp(-elapsed / decay_scale)))


def intensity(
    head: IntensityHead, h_s: Tensor, h_e_hat: Optional[Tensor]
) -> Tensor:
    """Intensity map tensor [1, H, W] from the two hidden maps."""
    score = head.w_s(h_s)
    if h_e_hat is not None:
        if h_e_hat.shape[1:] != h_s.shape[1:]:
            raise RejectedInputError(
                f"hidden maps differ spatially: {h_s.shape} vs "
                f"{h_e_hat.shape}"
            )
        if head.w_e is None:
            raise RejectedInputError("this head has no event-stream kernel")
        score = T.add(score, head.w_e(h_e_hat))
    return head.activation(score)


class IntensityModel(nn.Module):
    """Intensity model of one variant, stateful across a sequence."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.variant = canonical_variant(cfg.variant)
        rng = np.random.default_rng(seed)
        activation = nn.IntensityActivation(cfg.activation, cfg.relu_epsilon)
        self.features = None
        self.sync = None
        self.async_ = None
        self.evolve = None
        if self.variant == "timeindep":
            self.features = self.add_child(
                "features",
                nn.ConvStack(2, cfg.feature_channels, cfg.kernel_size, rng),
            )
            self.head = self.add_child(
                "head",
                IntensityHead(cfg.feature_channels, None, activation, rng),
            )
            return
        self.sync = self.add_child("sync", SyncStream(cfg, rng))
        event_channels = None
        if self.variant == "syncasync":
            self.async_ = self.add_child("async", AsyncStream(cfg, rng))
            if cfg.evolving == "mlp":
                self.evolve = self.add_child(
                    "evolve",
                    nn.Mlp.evolving(
                        cfg.hidden_channels + 1,
                        cfg.mlp_hidden,
                        cfg.hidden_channels,
                        rng,
                    ),
                )
            event_channels = cfg.hidden_channels
        self.head = self.add_child(
            "head",
            IntensityHead(
                cfg.hidden_channels, event_channels, activation, rng
            ),
        )

    def reset(self, height: int, width: int) -> None:
        if self.sync is not None:
            self.sync.reset(height, width)
        if self.async_ is not None:
            self.async_.reset(height, width)

    def _aligned_event_state(self, t: int) -> Tensor:
        elapsed = t - self.async_.last_event_frame
        if self.evolve is None:
            return align_decay(self.async_.h, elapsed, self.cfg.decay_scale)
        return align(self.evolve, self.async_.h, elapsed)

    def forward_sequence_tensors(
        self,
        frames: np.ndarray,
        det_masks: np.ndarray,
        event_history: Optional[EventHistory] = None,
        teacher_forcing: bool = True,
        tau_e: float = 0.5,
        mode: str = "threshold",
        rng: Optional[np.random.Generator] = None,
        predicted: Optional[List[EventGrid]] = None,
    ) -> List[Tensor]:
        """Intensity tensors [1, H, W] for every frame of a sequence.

        With teacher forcing the asynchronous stream reads the labeled grid
        of frame t - 1 before frame t is scored; otherwise it reads the grid
        predicted from the model's own intensity at t - 1. Without teacher
        forcing the grid predicted at every frame is appended to
        ``predicted`` when a list is given.
        """
        frames = np.asarray(frames, dtype=np.float64)
        det_masks = np.asarray(det_masks, dtype=np.float64)
        if frames.ndim != 3 or len(frames) == 0:
            raise RejectedInputError(
                "forward_sequence needs a nonempty [T,H,W] sequence"
            )
        if det_masks.shape != frames.shape:
            raise RejectedInputError(
                f"detection masks {det_masks.shape} do not match frames "
                f"{frames.shape}"
            )
        n_frames, height, width = frames.shape
        if event_history is not None:
            late = [f for f in event_history.frames if f >= n_frames]
            if late:
                raise RejectedInputError(
                    f"event history holds frames {late} beyond the sequence"
                )
        if not teacher_forcing and mode == "bernoulli" and rng is None:
            rng = np.random.default_rng(0)
        self.reset(height, width)
        outputs = []
        previous_grid: Optional[EventGrid] = None
        for t in range(n_frames):
            frame = Tensor(frames[t][None])
            det_mask = Tensor(det_masks[t][None])
            if self.variant == "timeindep":
                features = self.features(T.concat([frame, det_mask], axis=0))
                lam = intensity(self.head, features, None)
            else:
                lam = self._two_stream_step(
                    t,
                    frame,
                    det_mask,
                    previous_grid,
                    event_history,
                    teacher_forcing,
                )
            outputs.append(lam)
            if not teacher_forcing:
                previous_grid = predict_events(
                    IntensityMap(t, lam.data[0]),
                    mode=mode,
                    tau_e=tau_e,
                    rng=rng,
                )
                if predicted is not None:
                    predicted.append(previous_grid)
        return outputs

    def _two_stream_step(
        self,
        t: int,
        frame: Tensor,
        det_mask: Tensor,
        previous_grid: Optional[EventGrid],
        event_history: Optional[EventHistory],
        teacher_forcing: bool,
    ) -> Tensor:
        h_s = sync_step(self.sync, frame, det_mask)
        if self.variant != "syncasync":
            return intensity(self.head, h_s, None)
        if teacher_forcing:
            previous_grid = (
                None
                if event_history is None or t == 0
                else event_history.grid_at(t - 1)
            )
        if previous_grid is not None and not previous_grid.is_empty():
            gap = max(t - 1 - self.async_.last_event_frame, 1)
            mask = Tensor(previous_grid.cells[None].astype(float))
            async_step(self.async_, mask, gap)
            self.async_.last_event_frame = t - 1
        return intensity(self.head, h_s, self._aligned_event_state(t))

    def forward_sequence(self, *args, **kwargs) -> List[IntensityMap]:
        tensors = self.forward_sequence_tensors(*args, **kwargs)
        return [IntensityMap(t, x.data[0]) for t, x in enumerate(tensors)]

    def save(self, path) -> None:
        nn.save_checkpoint(
            self,
            path,
            manifest_extra=dict(
                variant=self.variant, model=dataclasses.asdict(self.cfg)
            ),
        )

    @classmethod
    def load(cls, path) -> "IntensityModel":
        manifest = nn.read_manifest(path)
        cfg = ModelConfig(**manifest["model"])
        model = cls(cfg)
        nn.load_checkpoint(model, path)
        logging.info(f"Loaded {model.variant} model from {path}")
        return model


def forward_sequence(
    model: IntensityModel,
    frames: np.ndarray,
    det_masks: np.ndarray,
    event_history: Optional[EventHistory] = None,
    teacher_forcing: bool = True,
    **kwargs,
) -> List[IntensityMap]:
    return model.forward_sequence(
        frames, det_masks, event_history, teacher_forcing, **kwargs
    )


def copy_parameters(source: nn.Module, target: nn.Module) -> int:
    """Copy values of same-named parameters; return how many were copied."""
    targets = dict(target.named_parameters())
    copied = 0
    for name, param in source.named_parameters():
        if name in targets and targets[name].shape == param.shape:
            targets[name].data[...] = param.data
            copied += 1
    return copied
