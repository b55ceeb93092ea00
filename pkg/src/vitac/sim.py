"""Physics-lite gripper push simulator.

Stands in for the robot: a parallel gripper closes on an object until the
tactile norm crosses a threshold, holds, then opens. Per-taxel forces follow a
power-law elastic contact during closing and a standard-linear-solid
relaxation while the gripper is stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ThresholdUnreachable, WindowOutOfBounds
from .signal import (
    FRAME_DIM,
    N_AXES,
    N_COLS,
    N_FINGERS,
    N_ROWS,
    PreprocessConfig,
    PushRecording,
    TactileSequence,
    augment,
)

log = logging.getLogger(__name__)

# share of each taxel's force magnitude per axis (x shear, y shear, normal)
AXIS_SHARE = np.array([0.05, 0.05, 0.90])
BUMP_SIGMA_TAXELS = 1.2


@dataclass(frozen=True)
class MaterialModel:
    stiffness: float
    exponent: float = 1.0
    relax_ratio: float = 1.0
    relax_tau_s: float = 0.1
    noise_std: float = 0.0

    def __post_init__(self):
        vals = [self.stiffness, self.exponent, self.relax_ratio, self.relax_tau_s, self.noise_std]
        if not all(np.isfinite(vals)):
            raise ValueError("material parameters must be finite")
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")
        if self.exponent < 1:
            raise ValueError("exponent must be >= 1")
        if not 0.0 <= self.relax_ratio <= 1.0:
            raise ValueError("relax_ratio must lie in [0, 1]")
        if self.relax_tau_s <= 0:
            raise ValueError("relax_tau_s must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class ObjectSpec:
    label: str
    description: str
    appearance_tag: str
    material: MaterialModel
    width_mm: float = 40.0
    fragile: bool = False
    hardness: str = "medium"  # soft | medium | hard, the VLM's prior about the object
    donor: str | None = None  # reference class whose material this object clones

    def __post_init__(self):
        if not self.label:
            raise ValueError("label must be nonempty")
        if not self.appearance_tag:
            raise ValueError("appearance_tag must be nonempty")
        if self.width_mm <= 0:
            raise ValueError("width_mm must be positive")
        if self.hardness not in ("soft", "medium", "hard"):
            raise ValueError(f"unknown hardness {self.hardness!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectSpec":
        d = dict(d)
        d["material"] = MaterialModel(**d["material"])
        return cls(**d)


@dataclass(frozen=True)
class PushProtocolConfig:
    x_th: float = 0.004
    x_th_fragile: float = 0.003
    dt_stopping_s: float = 0.2
    close_speed: float = 5.0  # mm of squeeze per second after contact
    raw_rate_hz: int = 125
    placement_jitter: float = 0.3  # taxels, uniform in [-j, j] per grid axis
    approach_s: float = 0.5  # free travel before contact
    open_s: float = 0.4
    post_stop_s: float = 0.6

    def __post_init__(self):
        if not 0 < self.x_th_fragile <= self.x_th:
            raise ValueError("need 0 < x_th_fragile <= x_th")
        if self.dt_stopping_s <= 0:
            raise ValueError("dt_stopping_s must be positive")
        if self.close_speed <= 0:
            raise ValueError("close_speed must be positive")
        if self.placement_jitter < 0:
            raise ValueError("placement_jitter must be non-negative")
        if self.approach_s < 0.4:
            raise ValueError("approach_s must leave at least 0.4 s before the stop")


def contact_weights(center_row: float = 1.5, center_col: float = 1.5) -> np.ndarray:
    """Per-channel force weights of a Gaussian contact patch on both fingers."""
    rows, cols = np.meshgrid(np.arange(N_ROWS), np.arange(N_COLS), indexing="ij")
    bump = np.exp(-((rows - center_row) ** 2 + (cols - center_col) ** 2) / (2 * BUMP_SIGMA_TAXELS**2))
    # the opposing finger faces the other way: columns mirror
    per_finger = np.stack([bump, bump[:, ::-1]])
    w = per_finger[..., None] * AXIS_SHARE
    assert w.shape == (N_FINGERS, N_ROWS, N_COLS, N_AXES)
    return w.reshape(FRAME_DIM)


NOMINAL_WEIGHT_NORM = float(np.linalg.norm(contact_weights()))


def stiffness_for_close_time(
    close_time_s: float, exponent: float, proto: PushProtocolConfig = PushProtocolConfig(), fragile: bool = False
) -> float:
    """Stiffness at which a centred push crosses the threshold ``close_time_s`` after contact."""
    th = proto.x_th_fragile if fragile else proto.x_th
    squeeze = proto.close_speed * close_time_s
    return th / (NOMINAL_WEIGHT_NORM * squeeze**exponent)


def sls_relaxation(elapsed_s, relax_ratio: float, relax_tau_s: float):
    """Fraction of the stop force left after ``elapsed_s`` seconds at fixed squeeze."""
    return relax_ratio + (1.0 - relax_ratio) * np.exp(-np.asarray(elapsed_s) / relax_tau_s)


def simulate_push(obj: ObjectSpec, proto: PushProtocolConfig = PushProtocolConfig(), seed: int = 0, process_id: int = 0) -> PushRecording:
    rng = np.random.default_rng(seed)
    mat = obj.material
    rate = proto.raw_rate_hz
    th = proto.x_th_fragile if obj.fragile else proto.x_th

    jitter = rng.uniform(-proto.placement_jitter, proto.placement_jitter, size=2)
    w = contact_weights(1.5 + jitter[0], 1.5 + jitter[1])

    max_squeeze = 0.5 * obj.width_mm
    t_contact = proto.approach_s
    n_close = int(np.ceil((t_contact + max_squeeze / proto.close_speed) * rate)) + 1
    t = np.arange(n_close) / rate
    squeeze = np.clip(proto.close_speed * (t - t_contact), 0.0, max_squeeze)
    clean_close = (mat.stiffness * squeeze**mat.exponent)[:, None] * w
    noisy_close = clean_close + mat.noise_std * rng.standard_normal(clean_close.shape)

    norms = np.linalg.norm(noisy_close, axis=1)
    above = np.flatnonzero(norms > th)
    if len(above) == 0:
        raise ThresholdUnreachable(
            f"{obj.label}: norm peaked at {norms.max():.3g} <= x_th={th} over full travel"
        )
    stop = int(above[0])

    n_post = round(proto.post_stop_s * rate)
    f_stop = clean_close[stop]
    elapsed = np.arange(1, n_post) / rate
    level = sls_relaxation(elapsed, mat.relax_ratio, mat.relax_tau_s)
    opening = np.clip(1.0 - (elapsed - proto.dt_stopping_s) / proto.open_s, 0.0, 1.0)
    level = np.where(elapsed > proto.dt_stopping_s, level * opening, level)
    clean_post = level[:, None] * f_stop
    noisy_post = clean_post + mat.noise_std * rng.standard_normal(clean_post.shape)

    frames = np.concatenate([noisy_close[: stop + 1], noisy_post])
    return PushRecording(frames=frames, stop_index=stop, label=obj.label, process_id=process_id, raw_rate_hz=float(rate))


def label_seed(seed: int, label: str) -> int:
    """Per-object seed: the run seed xor a stable hash of the label."""
    h = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
    return (seed ^ h) & (2**63 - 1)


@dataclass
class GeneratedDataset:
    recordings: list[PushRecording] = field(default_factory=list)
    sequences: list[TactileSequence] = field(default_factory=list)


def generate_dataset(
    catalog: Iterable[ObjectSpec],
    proto: PushProtocolConfig = PushProtocolConfig(),
    processes_per_object: int = 10,
    seed: int = 0,
    *,
    splits: Mapping[str, str] | str = "train",
    augment_offsets: bool = True,
    prep: PreprocessConfig = PreprocessConfig(),
) -> GeneratedDataset:
    """Simulate every object ``processes_per_object`` times and preprocess.

    ``splits`` is either one split name for the whole catalog or a mapping
    from label to split. With ``augment_offsets=False`` only offset 0 is kept
    (one sequence per process), matching the test-set protocol.
    """
    catalog = list(catalog)
    if not catalog:
        raise ValueError("catalog is empty")
    labels = [o.label for o in catalog]
    if len(set(labels)) != len(labels):
        raise ValueError("catalog labels must be unique")
    out = GeneratedDataset()
    offsets = None if augment_offsets else [0]
    for obj in catalog:
        split = splits if isinstance(splits, str) else splits.get(obj.label, "train")
        base = label_seed(seed, obj.label)
        for p in range(processes_per_object):
            try:
                rec = simulate_push(obj, proto, seed=np.random.SeedSequence([base, p]).generate_state(1)[0], process_id=p)
                seqs = augment(rec, prep, split=split, offsets=offsets)
            except (ThresholdUnreachable, WindowOutOfBounds) as exc:
                raise type(exc)(f"while generating {obj.label!r}: {exc}") from exc
            out.recordings.append(rec)
            out.sequences.extend(seqs)
        log.debug("generated %s (%s)", obj.label, split)
    return out


def save_catalog(catalog: Iterable[ObjectSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([o.to_dict() for o in catalog], indent=2))


def load_catalog(path: str | Path) -> list[ObjectSpec]:
    return [ObjectSpec.from_dict(d) for d in json.loads(Path(path).read_text())]
