"""Tactile signal types and the push-sequence preprocessing chain.

A frame is a 96-vector laid out as ``(finger, row, col, axis)`` with
``finger in {0, 1}``, ``row, col in 0..3`` and ``axis in {x, y, z}``, the last
index varying fastest. Every module indexes channels through
:func:`channel_index` so the ordering stays consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import BadOffset, WindowOutOfBounds

N_FINGERS = 2
N_ROWS = 4
N_COLS = 4
N_AXES = 3
FRAME_DIM = N_FINGERS * N_ROWS * N_COLS * N_AXES  # 96


def channel_index(finger: int, row: int, col: int, axis: int) -> int:
    return ((finger * N_ROWS + row) * N_COLS + col) * N_AXES + axis


def check_frames(frames: np.ndarray, name: str = "frames") -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != FRAME_DIM:
        raise ValueError(f"{name} must have shape (n, {FRAME_DIM}), got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError(f"{name} contains non-finite values")
    return frames


@dataclass(frozen=True)
class PushRecording:
    """One raw push process at the sensor rate."""

    frames: np.ndarray
    stop_index: int
    label: str
    process_id: int = 0
    raw_rate_hz: float = 125.0

    def __post_init__(self):
        object.__setattr__(self, "frames", check_frames(self.frames))
        if self.raw_rate_hz <= 0:
            raise ValueError("raw_rate_hz must be positive")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class TactileSequence:
    """A cropped, subsampled push sequence: the network input ``X``."""

    frames: np.ndarray
    label: str
    process_id: int = 0
    offset: int = 0
    rate_hz: float = 25.0
    split: str = "train"
    # reconstruction target when it cannot be derived from ``frames`` alone
    target: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", check_frames(self.frames))
        if self.target is not None:
            object.__setattr__(self, "target", check_frames(self.target, "target"))

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def source(self) -> tuple[int, int]:
        return (self.process_id, self.offset)


@dataclass(frozen=True)
class PreprocessConfig:
    pre_stop_s: float = 0.4
    post_stop_s: float = 0.6
    raw_rate_hz: int = 125
    target_rate_hz: int = 25
    smoothing_sigma: float = 3.0  # in target-rate samples
    num_offsets: int = 5
    smooth_before_subsample: bool = False

    def __post_init__(self):
        if self.raw_rate_hz % self.target_rate_hz != 0:
            raise ValueError("raw_rate_hz must be a multiple of target_rate_hz")
        if self.num_offsets != self.raw_rate_hz // self.target_rate_hz:
            raise ValueError("num_offsets must equal raw_rate_hz / target_rate_hz")
        if self.smoothing_sigma <= 0:
            raise ValueError("smoothing_sigma must be positive")

    @property
    def stride(self) -> int:
        return self.raw_rate_hz // self.target_rate_hz

    @property
    def pre_frames(self) -> int:
        return round(self.pre_stop_s * self.raw_rate_hz)

    @property
    def post_frames(self) -> int:
        return round(self.post_stop_s * self.raw_rate_hz)

    @property
    def window_len(self) -> int:
        return self.pre_frames + self.post_frames

    @property
    def seq_len(self) -> int:
        return self.window_len // self.stride


def crop_around_stop(rec: PushRecording, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Return the raw frames from ``pre_stop_s`` before to ``post_stop_s`` after the stop."""
    start = rec.stop_index - cfg.pre_frames
    end = rec.stop_index + cfg.post_frames
    if start < 0 or end > len(rec.frames):
        raise WindowOutOfBounds(
            f"{rec.label}#{rec.process_id}: window [{start}, {end}) outside "
            f"recording of {len(rec.frames)} frames (stop_index={rec.stop_index})"
        )
    return rec.frames[start:end].copy()


def subsample_with_offset(
    window: np.ndarray,
    offset: int,
    cfg: PreprocessConfig = PreprocessConfig(),
    *,
    label: str = "",
    process_id: int = 0,
    split: str = "train",
) -> TactileSequence:
    window = np.asarray(window, dtype=np.float64)
    if len(window) != cfg.window_len:
        raise WindowOutOfBounds(f"window must have {cfg.window_len} frames, got {len(window)}")
    if not 0 <= offset < cfg.num_offsets:
        raise BadOffset(f"offset {offset} outside 0..{cfg.num_offsets - 1}")
    frames = window[offset :: cfg.stride]
    return TactileSequence(
        frames=frames,
        label=label,
        process_id=process_id,
        offset=offset,
        rate_hz=float(cfg.target_rate_hz),
        split=split,
    )


def augment(
    rec: PushRecording,
    cfg: PreprocessConfig = PreprocessConfig(),
    *,
    split: str = "train",
    offsets: list[int] | None = None,
) -> list[TactileSequence]:
    """Crop a recording and emit one subsampled sequence per offset."""
    window = crop_around_stop(rec, cfg)
    if offsets is None:
        offsets = list(range(cfg.num_offsets))
    seqs = [
        subsample_with_offset(
            window, o, cfg, label=rec.label, process_id=rec.process_id, split=split
        )
        for o in offsets
    ]
    if cfg.smooth_before_subsample:
        seqs = [replace(s, target=smoothed_target(s, cfg, window)) for s in seqs]
    return seqs


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps truncated at radius ``ceil(4 sigma)``."""
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_frames(frames: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    frames = np.asarray(frames, dtype=np.float64)
    return gaussian_filter1d(frames, sigma, axis=0, mode="reflect", radius=math.ceil(4.0 * sigma))


def gaussian_smooth(seq: TactileSequence, sigma: float = 3.0) -> TactileSequence:
    """Per-channel temporal Gaussian smoothing; produces the reconstruction target."""
    return replace(seq, frames=smooth_frames(seq.frames, sigma))


def smoothed_target(
    seq: TactileSequence,
    cfg: PreprocessConfig = PreprocessConfig(),
    window: np.ndarray | None = None,
) -> np.ndarray:
    """Reconstruction target for ``seq`` under the configured smoothing order.

    With ``smooth_before_subsample`` the raw window is filtered at the sensor
    rate (sigma scaled by the stride) and then subsampled at the sequence's
    offset; ``window`` must be supplied in that case.
    """
    if not cfg.smooth_before_subsample:
        return smooth_frames(seq.frames, cfg.smoothing_sigma)
    if window is None:
        if seq.target is not None:
            return seq.target
        raise ValueError("smooth_before_subsample requires the raw window")
    raw = smooth_frames(window, cfg.smoothing_sigma * cfg.stride)
    return raw[seq.offset :: cfg.stride]


@dataclass(frozen=True)
class ChannelStats:
    """Affine input normalization fitted on a training set."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(FRAME_DIM))
    scale: np.ndarray = field(default_factory=lambda: np.ones(FRAME_DIM))

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.scale


def fit_channel_stats(frames: np.ndarray, mode: str) -> ChannelStats:
    """Fit normalization over stacked ``(..., 96)`` frames.

    ``mode`` is ``"none"``, ``"global"`` (one mean/std shared by every
    channel) or ``"per_channel"``.
    """
    flat = np.asarray(frames, dtype=np.float64).reshape(-1, FRAME_DIM)
    if mode == "none":
        return ChannelStats()
    if mode == "global":
        std = float(flat.std()) or 1.0
        return ChannelStats(np.full(FRAME_DIM, flat.mean()), np.full(FRAME_DIM, std))
    if mode == "per_channel":
        std = flat.std(axis=0)
        std[std == 0] = 1.0
        return ChannelStats(flat.mean(axis=0), std)
    raise ValueError(f"unknown normalization mode {mode!r}")
