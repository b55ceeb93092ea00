"""Accuracy, confusion matrices and their file renderings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import EmptyRecords, UnknownLabel


@dataclass
class SampleRecord:
    sample_id: str
    true_label: str
    predicted_label: str | None
    parse_status: str = "ok"
    topk: list = field(default_factory=list)  # [(label, distance), ...]
    description: str | None = None
    raw_text: str = ""
    latency_s: float = 0.0
    error: str | None = None

    @property
    def correct(self) -> bool:
        return self.predicted_label is not None and self.predicted_label == self.true_label

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "true_label": self.true_label,
            "predicted_label": self.predicted_label,
            "parse_status": self.parse_status,
            "topk": [[l, d] for l, d in self.topk],
            "description": self.description,
            "raw_text": self.raw_text,
            "latency_s": self.latency_s,
            "error": self.error,
        }


def compute_accuracy(records: Sequence[SampleRecord]) -> float:
    """Fraction of correct predictions; unparsed replies count as wrong."""
    if not records:
        raise EmptyRecords("no records to score")
    return sum(r.correct for r in records) / len(records)


@dataclass
class Confusion:
    labels: list[str]
    matrix: np.ndarray  # rows true, columns predicted
    unparsed: np.ndarray  # per true class, samples with no usable prediction

    @property
    def row_totals(self) -> np.ndarray:
        return self.matrix.sum(1) + self.unparsed

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.matrix) / self.row_totals.sum())


def confusion_matrix(records: Sequence[SampleRecord], label_order: Sequence[str]) -> Confusion:
    labels = list(label_order)
    pos = {l: i for i, l in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=int)
    unparsed = np.zeros(len(labels), dtype=int)
    for r in records:
        if r.true_label not in pos:
            raise UnknownLabel(f"true label {r.true_label!r} not in label order")
        if r.predicted_label is None:
            unparsed[pos[r.true_label]] += 1
            continue
        if r.predicted_label not in pos:
            raise UnknownLabel(f"predicted label {r.predicted_label!r} not in label order")
        m[pos[r.true_label], pos[r.predicted_label]] += 1
    return Confusion(labels, m, unparsed)


def write_confusion_csv(conf: Confusion, path: str | Path) -> None:
    with_unparsed = bool(conf.unparsed.any())
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\predicted", *conf.labels, *(["unparsed"] if with_unparsed else [])])
        for i, label in enumerate(conf.labels):
            row = [label, *conf.matrix[i].tolist()]
            if with_unparsed:
                row.append(int(conf.unparsed[i]))
            w.writerow(row)


def read_confusion_csv(path: str | Path) -> Confusion:
    with Path(path).open() as f:
        rows = list(csv.reader(f))
    header = rows[0][1:]
    with_unparsed = header[-1] == "unparsed"
    labels = header[:-1] if with_unparsed else header
    body = np.array([[int(x) for x in r[1:]] for r in rows[1:]], dtype=int)
    if with_unparsed:
        return Confusion(labels, body[:, :-1], body[:, -1])
    return Confusion(labels, body, np.zeros(len(labels), dtype=int))


def plot_confusion(conf: Confusion, path: str | Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(conf.labels)
    size = max(4.0, 0.45 * n + 2.0)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(conf.matrix, cmap="Blues")
    ax.set_xticks(range(n), conf.labels, rotation=90, fontsize=7)
    ax.set_yticks(range(n), conf.labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    vmax = conf.matrix.max() or 1
    for i in range(n):
        for j in range(n):
            v = conf.matrix[i, j]
            if v:
                ax.text(j, i, str(v), ha="center", va="center", fontsize=7,
                        color="white" if v > vmax / 2 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
