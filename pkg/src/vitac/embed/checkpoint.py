"""Trained-network container, serialization and inference helpers."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import CorruptFile, ModelMismatch, ShapeMismatch
from ..signal import ChannelStats, TactileSequence
from .model import NetworkConfig, encode_latent, param_shapes, quantize

FORMAT_VERSION = 1


def stack_time_major(frames: Sequence[np.ndarray]) -> np.ndarray:
    """``B`` arrays of shape ``(T, D)`` -> one ``(T, B, D)`` batch."""
    return np.ascontiguousarray(np.stack(frames, axis=1))


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    norm: ChannelStats = field(default_factory=ChannelStats)
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = set(expected) ^ set(self.params)
            raise ModelMismatch(f"parameter set does not match config: {sorted(missing)}")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise ModelMismatch(f"{k}: shape {self.params[k].shape} != {shape}")

    @property
    def codebook(self) -> np.ndarray | None:
        return self.params.get("codebook")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for k in sorted(self.params):
            a = np.ascontiguousarray(self.params[k])
            h.update(k.encode())
            h.update(str(a.dtype).encode())
            h.update(a.tobytes())
        h.update(np.ascontiguousarray(self.norm.mean).tobytes())
        h.update(np.ascontiguousarray(self.norm.scale).tobytes())
        return h.hexdigest()

    # -------------------------------------------------------------- inference

    def prepare(self, frames: Sequence[np.ndarray]) -> np.ndarray:
        dtype = next(iter(self.params.values())).dtype
        batch = []
        for f in frames:
            f = np.asarray(f)
            if f.ndim != 2 or f.shape[1] != self.config.input_dim:
                raise ShapeMismatch(f"sequence shape {f.shape} incompatible with input_dim={self.config.input_dim}")
            batch.append(self.norm.apply(f))
        return stack_time_major(batch).astype(dtype)

    def encode(self, seqs: Sequence[TactileSequence | np.ndarray], batch_size: int = 512) -> np.ndarray:
        """Continuous embeddings ``(N, d_z)``; the posterior mean for the beta-VAE."""
        frames = [s.frames if isinstance(s, TactileSequence) else s for s in seqs]
        if not frames:
            return np.zeros((0, self.config.latent_dim))
        out = []
        for i in range(0, len(frames), batch_size):
            X = self.prepare(frames[i : i + batch_size])
            out.append(encode_latent(self.params, self.config, X))
        return np.concatenate(out).astype(np.float64)

    def quantize(self, z: np.ndarray):
        if self.codebook is None:
            raise ModelMismatch("beta-VAE checkpoints have no codebook")
        zq, idx = quantize(np.asarray(z, dtype=self.codebook.dtype), self.codebook)
        return zq, idx

    # -------------------------------------------------------------- persistence

    def save(self, path: str | Path) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "metadata": self.metadata,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "dtype": str(next(iter(self.params.values())).dtype),
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["norm/mean"] = self.norm.mean
        arrays["norm/scale"] = self.norm.scale
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path, expect_config: NetworkConfig | None = None) -> "Checkpoint":
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(z["__meta__"].tobytes().decode())
                params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
                norm = ChannelStats(z["norm/mean"], z["norm/scale"])
        except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
            raise CorruptFile(f"cannot read checkpoint {path}: {exc}") from exc
        config = NetworkConfig(**meta["config"])
        if expect_config is not None and expect_config != config:
            raise ModelMismatch(f"checkpoint config {config} != expected {expect_config}")
        return cls(config, params, norm, seed=meta["seed"], metadata=meta["metadata"])
