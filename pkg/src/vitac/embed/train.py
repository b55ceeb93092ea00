"""Mini-batch Adam training of the tactile autoencoder."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteLoss
from ..signal import PreprocessConfig, TactileSequence, fit_channel_stats, smoothed_target
from .adam import Adam, AdamConfig
from .checkpoint import Checkpoint, stack_time_major
from .model import LossBreakdown, NetworkConfig, forward_backward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    adam: AdamConfig = AdamConfig()
    batch_size: int = 256
    max_epochs: int = 22
    patience: int = 5
    min_delta: float = 1e-5
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")


@dataclass
class EpochStats:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown | None = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    final_params: dict | None = None

    def history_dicts(self) -> list[dict]:
        return [
            {"epoch": h.epoch, "train": asdict(h.train), "val": asdict(h.val) if h.val else None}
            for h in self.history
        ]


def build_arrays(seqs: Sequence[TactileSequence], prep: PreprocessConfig, norm) -> tuple[np.ndarray, np.ndarray]:
    X = stack_time_major([norm.apply(s.frames) for s in seqs])
    Y = stack_time_major([norm.apply(smoothed_target(s, prep)) for s in seqs])
    return X, Y


def evaluate(params, cfg: NetworkConfig, X, Y, batch_size: int = 512) -> LossBreakdown:
    """Sample-weighted mean of every loss term over a dataset."""
    n = X.shape[1]
    acc = np.zeros(5)
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        r = forward_backward(params, cfg, X[:, sl], Y[:, sl], need_grads=False)
        l = r.loss
        acc += np.array([l.recon, l.vq, l.commit, l.kl, l.total]) * X[:, sl].shape[1]
    return LossBreakdown(*(acc / n).tolist())


def train(
    train_set: Sequence[TactileSequence],
    val_set: Sequence[TactileSequence],
    net_cfg: NetworkConfig = NetworkConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    prep: PreprocessConfig = PreprocessConfig(),
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Train until validation loss stalls for ``patience`` epochs or ``max_epochs``.

    Epoch 0 in the history is the loss of the freshly initialized network.
    The returned checkpoint holds the parameters with the best validation loss
    (the last epoch's when there is no validation set).
    """
    if not train_set:
        raise ValueError("training set is empty")
    dtype = np.dtype(train_cfg.dtype)
    rng = np.random.default_rng(train_cfg.seed)
    init_rng, shuffle_rng, noise_rng = rng.spawn(3)

    norm = fit_channel_stats(np.stack([s.frames for s in train_set]), net_cfg.input_norm)
    X, Y = (a.astype(dtype) for a in build_arrays(train_set, prep, norm))
    if val_set:
        Xv, Yv = (a.astype(dtype) for a in build_arrays(val_set, prep, norm))

    params = init_params(net_cfg, init_rng, dtype=dtype)
    opt = Adam(params, train_cfg.adam)
    n = X.shape[1]

    def snapshot(epoch):
        stats = EpochStats(epoch, evaluate(params, net_cfg, X, Y), evaluate(params, net_cfg, Xv, Yv) if val_set else None)
        log.info("epoch %d train %.6g val %s", epoch, stats.train.total, stats.val and f"{stats.val.total:.6g}")
        if on_epoch:
            on_epoch(stats)
        return stats

    history = [snapshot(0)]
    best_params = {k: v.copy() for k, v in params.items()}
    best_score = history[0].val.total if val_set else history[0].train.total
    best_epoch, stale, stopped = 0, 0, False

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            eps = None
            if net_cfg.bottleneck == "betavae":
                eps = noise_rng.standard_normal((len(idx), net_cfg.latent_dim)).astype(dtype)
            r = forward_backward(params, net_cfg, X[:, idx], Y[:, idx], eps=eps)
            if not np.isfinite(r.loss.total):
                raise NonFiniteLoss(b, epoch)
            opt.step(r.grads)
        stats = snapshot(epoch)
        history.append(stats)
        score = stats.val.total if val_set else stats.train.total
        if score < best_score - train_cfg.min_delta:
            best_score, best_epoch, stale = score, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= train_cfg.patience:
                stopped = True
                break

    if not val_set:
        best_params = {k: v.copy() for k, v in params.items()}
        best_epoch = history[-1].epoch

    ckpt = Checkpoint(
        net_cfg,
        best_params,
        norm,
        seed=train_cfg.seed,
        metadata={
            "best_epoch": best_epoch,
            "epochs_run": history[-1].epoch,
            "stopped_early": stopped,
            "history": [
                {"epoch": h.epoch, "train": asdict(h.train), "val": asdict(h.val) if h.val else None}
                for h in history
            ],
            "train_config": {**asdict(train_cfg)},
            "prep_config": asdict(prep),
        },
    )
    return TrainResult(ckpt, history, best_epoch, stopped, final_params=params)
