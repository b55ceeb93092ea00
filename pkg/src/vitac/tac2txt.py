"""Tactile-to-text database: reference embeddings keyed to class descriptions.

Retrieval is an exact scan. A class scores the smallest L2 distance from the
query to any of its entries, and the ``k`` best-scoring distinct classes are
returned, closest first, with ties going to the lexicographically smaller label.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CorruptFile, FingerprintMismatch, KTooLarge, MissingDescription, ModelMismatch
from .signal import TactileSequence

log = logging.getLogger(__name__)

DB_FORMAT = "tac2txt-db"
DB_VERSION = 1


@dataclass(frozen=True)
class ReferenceEntry:
    embedding: np.ndarray
    label: str
    description: str

    def __post_init__(self):
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))
        if not self.label:
            raise ValueError("reference label must be nonempty")
        if not np.all(np.isfinite(self.embedding)):
            raise ValueError(f"non-finite embedding for {self.label!r}")


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    metric: str = "l2"
    use_quantized: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.metric != "l2":
            raise ValueError("only the l2 metric is supported")


@dataclass
class TactileTextDB:
    entries: list[ReferenceEntry]
    fingerprint: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("database needs at least one entry")
        if not self.fingerprint:
            raise ValueError("fingerprint must be nonempty")
        dims = {e.embedding.shape for e in self.entries}
        if len(dims) != 1:
            raise ModelMismatch(f"mixed embedding shapes {dims}")
        self._matrix = np.stack([e.embedding for e in self.entries])
        self._matrix.setflags(write=False)
        self.classes = sorted({e.label for e in self.entries})
        rank = {c: i for i, c in enumerate(self.classes)}
        self._class_idx = np.array([rank[e.label] for e in self.entries])
        self.descriptions = {e.label: e.description for e in self.entries}

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    @property
    def embeddings(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TactileTextDB):
            return NotImplemented
        return (
            self.fingerprint == other.fingerprint
            and [(e.label, e.description) for e in self.entries] == [(e.label, e.description) for e in other.entries]
            and np.array_equal(self._matrix, other._matrix)
        )

    def class_scores(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dimension,):
            raise ModelMismatch(f"query dimension {z.shape} != database dimension {self.dimension}")
        d = np.linalg.norm(self._matrix - z, axis=1)
        scores = np.full(len(self.classes), np.inf)
        np.minimum.at(scores, self._class_idx, d)
        return scores

    def query(self, z, k: int = 3) -> list[tuple[str, float]]:
        return query_topk_classes(self, z, RetrievalConfig(k=k))


def build_db(
    checkpoint,
    sequences: Sequence[TactileSequence],
    descriptions: Mapping[str, str],
    *,
    classes: Sequence[str] | None = None,
    use_quantized: bool = False,
) -> TactileTextDB:
    """Embed every reference sequence (optionally restricted to ``classes``)."""
    if classes is not None:
        keep = set(classes)
        sequences = [s for s in sequences if s.label in keep]
    if not sequences:
        raise ValueError("no reference sequences to index")
    missing = sorted({s.label for s in sequences} - set(descriptions))
    if missing:
        raise MissingDescription(f"no description for {missing}")
    if sequences[0].frames.shape[1] != checkpoint.config.input_dim:
        raise ModelMismatch(
            f"sequence dim {sequences[0].frames.shape[1]} != checkpoint input_dim {checkpoint.config.input_dim}"
        )
    Z = checkpoint.encode(sequences)
    if use_quantized:
        Z = checkpoint.quantize(Z)[0].astype(np.float64)
    entries = [ReferenceEntry(z, s.label, descriptions[s.label]) for z, s in zip(Z, sequences)]
    meta = {
        "num_sequences": len(entries),
        "num_classes": len({s.label for s in sequences}),
        "splits": sorted({s.split for s in sequences}),
        "quantized": use_quantized,
    }
    return TactileTextDB(entries, checkpoint.fingerprint(), meta)


def query_topk_classes(db: TactileTextDB, z, cfg: RetrievalConfig = RetrievalConfig()) -> list[tuple[str, float]]:
    if cfg.k > len(db.classes):
        raise KTooLarge(f"k={cfg.k} but database holds {len(db.classes)} classes")
    scores = db.class_scores(z)
    # classes are sorted by label, so index order is the lexicographic tie-break
    order = np.lexsort((np.arange(len(scores)), scores))[: cfg.k]
    return [(db.classes[i], float(scores[i])) for i in order]


def format_description(labels: Sequence[str], descriptions: Mapping[str, str]) -> str:
    """Comma-join the descriptions of ``labels`` in rank order."""
    if not labels:
        raise ValueError("need at least one label")
    try:
        return ", ".join(descriptions[l] for l in labels)
    except KeyError as exc:
        raise MissingDescription(f"no description for {exc.args[0]!r}") from None


def save_db(db: TactileTextDB, path: str | Path) -> None:
    doc = {
        "format": DB_FORMAT,
        "version": DB_VERSION,
        "dimension": db.dimension,
        "fingerprint": db.fingerprint,
        "metadata": db.metadata,
        "entries": [
            {"label": e.label, "description": e.description, "embedding": e.embedding.tolist()}
            for e in db.entries
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_db(path: str | Path, expect_fingerprint: str | None = None, allow_mismatch: bool = False) -> TactileTextDB:
    """Load a database, checking it was built by the active checkpoint.

    A fingerprint mismatch raises unless ``allow_mismatch``, in which case it
    only warns.
    """
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != DB_FORMAT:
            raise ValueError(f"not a {DB_FORMAT} file")
        entries = [ReferenceEntry(e["embedding"], e["label"], e["description"]) for e in doc["entries"]]
        db = TactileTextDB(entries, doc["fingerprint"], doc.get("metadata", {}))
        if db.dimension != doc["dimension"]:
            raise ValueError("header dimension disagrees with entries")
    except (OSError, ValueError, KeyError, TypeError, ModelMismatch) as exc:
        raise CorruptFile(f"cannot read database {path}: {exc}") from exc
    if expect_fingerprint is not None and db.fingerprint != expect_fingerprint:
        msg = f"database {path} was built by checkpoint {db.fingerprint[:12]}, active is {expect_fingerprint[:12]}"
        if not allow_mismatch:
            raise FingerprintMismatch(msg)
        warnings.warn(msg, stacklevel=2)
    return db
