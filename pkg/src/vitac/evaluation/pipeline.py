"""End-to-end evaluation: generate, train, index, classify, score.

Every expensive stage writes its artifact under the cache directory, keyed by
a hash of everything that determines it, and later runs reuse it. Cached and
fresh artifacts are bit-identical (JSON floats and npz arrays round-trip
exactly), so the report does not depend on cache state.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import catalogs
from ..embed.checkpoint import Checkpoint
from ..embed.train import train
from ..errors import StageError
from ..io import read_sequences, write_sequences
from ..signal import TactileSequence
from ..sim import ObjectSpec, generate_dataset, load_catalog
from ..tac2txt import RetrievalConfig, TactileTextDB, build_db, format_description, load_db, query_topk_classes, save_db
from ..vlm.backends import ClassificationRequest, MockKnowledge, classify_many, make_backend
from .config import BUILTIN_PREFIX, ExperimentConfig, stable_hash
from .metrics import Confusion, SampleRecord, compute_accuracy, confusion_matrix, plot_confusion, write_confusion_csv

log = logging.getLogger(__name__)

REPORT_FORMAT = "vitac-eval-report"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp")


def load_catalog_ref(ref: str) -> list[ObjectSpec]:
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        return {
            "reference": catalogs.reference_catalog,
            "foodreplica": catalogs.foodreplica_catalog,
            "cube": catalogs.cube_catalog,
        }[name]()
    return load_catalog(ref)


def reference_split_map(cfg: ExperimentConfig, catalog: list[ObjectSpec]) -> dict[str, str]:
    val = set(cfg.val_labels if cfg.val_labels is not None else catalogs.REFERENCE_VAL_LABELS)
    return {o.label: ("val" if o.label in val else "train") for o in catalog}


@dataclass
class Stage:
    """Context manager that rewraps any failure with the stage name."""

    name: str

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


# ------------------------------------------------------------------ stages


def cached_sequences(cache: Path, key_obj: dict, make: Callable[[], list[TactileSequence]]) -> tuple[list[TactileSequence], str]:
    key = stable_hash(key_obj)
    path = cache / f"data-{key}" / "sequences.jsonl"
    if path.exists():
        log.info("reusing %s", path)
        return read_sequences(path), key
    seqs = make()
    tmp = path.with_suffix(".partial")
    write_sequences(tmp, seqs)
    tmp.replace(path)
    return seqs, key


def reference_data(cfg: ExperimentConfig, catalog: list[ObjectSpec]) -> tuple[list[TactileSequence], str]:
    splits = reference_split_map(cfg, catalog)
    key_obj = {
        "kind": "reference",
        "catalog": [o.to_dict() for o in catalog],
        "splits": splits,
        "protocol": asdict(cfg.protocol),
        "prep": asdict(cfg.prep),
        "processes": cfg.processes_per_object,
        "seed": cfg.seed,
    }
    return cached_sequences(
        cfg.cache_path,
        key_obj,
        lambda: generate_dataset(
            catalog, cfg.protocol, cfg.processes_per_object, cfg.seed, splits=splits, prep=cfg.prep
        ).sequences,
    )


def test_seed(cfg: ExperimentConfig) -> int:
    # keeps test draws independent of reference draws even for shared labels
    return cfg.seed + 1


def test_data(cfg: ExperimentConfig, catalog: list[ObjectSpec]) -> tuple[list[TactileSequence], str]:
    key_obj = {
        "kind": "test",
        "catalog": [o.to_dict() for o in catalog],
        "protocol": asdict(cfg.protocol),
        "prep": asdict(cfg.prep),
        "processes": cfg.test_processes,
        "seed": test_seed(cfg),
    }
    return cached_sequences(
        cfg.cache_path,
        key_obj,
        lambda: generate_dataset(
            catalog, cfg.protocol, cfg.test_processes, test_seed(cfg),
            splits="test", augment_offsets=False, prep=cfg.prep,
        ).sequences,
    )


def train_classes(cfg: ExperimentConfig, seqs: list[TactileSequence]) -> list[str]:
    labels = sorted({s.label for s in seqs if s.split == "train"})
    if cfg.reference_classes is None:
        return labels
    unknown = sorted(set(cfg.reference_classes) - set(labels))
    if unknown:
        raise ValueError(f"reference_classes not among the training classes: {unknown}")
    return sorted(cfg.reference_classes)


def trained_checkpoint(cfg: ExperimentConfig, seqs: list[TactileSequence], data_key: str) -> Checkpoint:
    classes = train_classes(cfg, seqs)
    net = cfg.net_config
    key = stable_hash({
        "data": data_key,
        "classes": classes,
        "net": asdict(net),
        "train": asdict(cfg.train),
        "prep": asdict(cfg.prep),
    })
    path = cfg.cache_path / f"ckpt-{key}.npz"
    if path.exists():
        log.info("reusing %s", path)
        return Checkpoint.load(path, expect_config=net)
    keep = set(classes)
    tr = [s for s in seqs if s.split == "train" and s.label in keep]
    va = [s for s in seqs if s.split == "val"]
    result = train(tr, va, net, cfg.train, cfg.prep)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".partial.npz")
    result.checkpoint.save(tmp)
    tmp.replace(path)
    # reload so fresh and cached runs see exactly the same object
    return Checkpoint.load(path, expect_config=net)


def db_classes(cfg: ExperimentConfig, seqs: list[TactileSequence]) -> list[str]:
    classes = set(train_classes(cfg, seqs))
    if cfg.include_val_in_db:
        classes |= {s.label for s in seqs if s.split == "val"}
    return sorted(classes)


def reference_db(cfg: ExperimentConfig, ckpt: Checkpoint, seqs: list[TactileSequence], descriptions: dict[str, str]) -> TactileTextDB:
    classes = db_classes(cfg, seqs)
    fp = ckpt.fingerprint()
    key = stable_hash({
        "checkpoint": fp,
        "classes": classes,
        "descriptions": {c: descriptions.get(c) for c in classes},
        "quantized": cfg.use_quantized,
    })
    path = cfg.cache_path / f"db-{key}.json"
    if not path.exists():
        db = build_db(ckpt, seqs, descriptions, classes=classes, use_quantized=cfg.use_quantized)
        tmp = path.with_suffix(".partial")
        save_db(db, tmp)
        tmp.replace(path)
    return load_db(path, expect_fingerprint=fp)


def find_image(image_dir: str | None, label: str) -> str | None:
    if image_dir is None:
        return None
    for suffix in IMAGE_SUFFIXES:
        p = Path(image_dir) / f"{label}{suffix}"
        if p.is_file():
            return str(p)
    return None


def sample_id(label: str, process_id: int) -> str:
    return f"{label}/{process_id:03d}"


# ------------------------------------------------------------------ report


@dataclass
class EvalReport:
    records: list[SampleRecord]
    labels: list[str]
    accuracy: float
    confusion: Confusion
    config: dict
    seeds: dict
    fingerprints: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": 1,
            "config": self.config,
            "seeds": self.seeds,
            "fingerprints": self.fingerprints,
            "training": self.training,
            "labels": self.labels,
            "num_records": len(self.records),
            "accuracy": self.accuracy,
            "confusion": {
                "labels": self.confusion.labels,
                "matrix": self.confusion.matrix.tolist(),
                "unparsed": self.confusion.unparsed.tolist(),
            },
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def write(self, out_dir: str | Path, plot: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        write_confusion_csv(self.confusion, out / "confusion.csv")
        if plot:
            plot_confusion(self.confusion, out / "confusion.png", title=f"accuracy {self.accuracy:.3f}")


def run_pipeline(cfg: ExperimentConfig, *, write: bool = True, plot: bool = True, backend=None) -> EvalReport:
    """Run one experiment and (by default) write its report under ``cfg.output_dir``."""
    with Stage("load-catalogs"):
        ref_cat = load_catalog_ref(cfg.reference_catalog)
        test_cat = load_catalog_ref(cfg.test_catalog)
        labels = [o.label for o in test_cat]
        if len(set(labels)) != len(labels):
            raise ValueError("test catalog labels must be unique")
        descriptions = {o.label: o.description for o in ref_cat}
        if backend is None:
            knowledge = MockKnowledge.from_catalogs(ref_cat, test_cat) if cfg.backend.kind == "mock" else None
            backend = make_backend(cfg.backend, knowledge)

    fingerprints: dict = {}
    training: dict = {}
    retrieved: dict[str, list[tuple[str, float]]] = {}

    if cfg.vision_only:
        sample_ids = [sample_id(o.label, p) for o in test_cat for p in range(cfg.test_processes)]
        true_labels = [o.label for o in test_cat for _ in range(cfg.test_processes)]
    else:
        with Stage("gen-data"):
            ref_seqs, ref_key = reference_data(cfg, ref_cat)
            test_seqs, test_key = test_data(cfg, test_cat)
            fingerprints.update(reference_data=ref_key, test_data=test_key)
        with Stage("train"):
            ckpt = trained_checkpoint(cfg, ref_seqs, ref_key)
            fingerprints["checkpoint"] = ckpt.fingerprint()
            training = {k: ckpt.metadata[k] for k in ("best_epoch", "epochs_run", "stopped_early") if k in ckpt.metadata}
        with Stage("build-db"):
            db = reference_db(cfg, ckpt, ref_seqs, descriptions)
            fingerprints["db_classes"] = db.classes
        with Stage("retrieve"):
            Z = ckpt.encode(test_seqs)
            if cfg.use_quantized:
                Z = ckpt.quantize(Z)[0].astype(np.float64)
            rcfg = RetrievalConfig(k=cfg.top_k, use_quantized=cfg.use_quantized)
            sample_ids = [sample_id(s.label, s.process_id) for s in test_seqs]
            true_labels = [s.label for s in test_seqs]
            for sid, z in zip(sample_ids, Z):
                retrieved[sid] = query_topk_classes(db, z, rcfg)

    tags = {o.label: o.appearance_tag for o in test_cat}
    with Stage("classify"):
        requests, desc_of = [], {}
        for sid, label in zip(sample_ids, true_labels):
            topk = retrieved.get(sid, [])
            ref_labels = tuple(l for l, _ in topk)
            desc = format_description(ref_labels, descriptions) if topk else None
            desc_of[sid] = desc
            requests.append(
                ClassificationRequest(
                    candidate_labels=tuple(labels),
                    appearance_tag=tags[label],
                    image_ref=find_image(cfg.image_dir, label),
                    tactile_description=desc,
                    reference_labels=ref_labels,
                )
            )
        outcomes = classify_many(backend, requests, cfg.backend.max_in_flight)

    records = []
    for sid, label, out in zip(sample_ids, true_labels, outcomes):
        rec = SampleRecord(sid, label, None, topk=retrieved.get(sid, []), description=desc_of[sid])
        if isinstance(out, Exception):
            rec.parse_status = "error"
            rec.error = f"{type(out).__name__}: {out}"
            log.warning("sample %s failed: %s", sid, rec.error)
        else:
            rec.predicted_label = out.chosen_label
            rec.parse_status = out.parse_status
            rec.raw_text = out.raw_text
            rec.latency_s = out.latency_s
        records.append(rec)
    records.sort(key=lambda r: r.sample_id)

    with Stage("score"):
        conf = confusion_matrix(records, labels)
        report = EvalReport(
            records=records,
            labels=labels,
            accuracy=compute_accuracy(records),
            confusion=conf,
            config=cfg.to_dict(),
            seeds={"data": cfg.seed, "test_data": test_seed(cfg), "train": cfg.train.seed},
            fingerprints=fingerprints,
            training=training,
        )
    if write:
        with Stage("write-report"):
            report.write(cfg.output_dir, plot=plot)
    return report

