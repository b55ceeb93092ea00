"""Command-line entry point: ``vitac <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .embed.checkpoint import Checkpoint
from .embed.train import train
from .errors import VitacError
from .evaluation.config import ExperimentConfig
from .evaluation.experiments import run_reference_ablation, run_variant_grid
from .evaluation.pipeline import (
    db_classes,
    find_image,
    load_catalog_ref,
    reference_split_map,
    run_pipeline,
    sample_id,
    test_seed,
    train_classes,
)
from .io import read_sequences, write_recordings, write_sequences
from .sim import generate_dataset
from .tac2txt import RetrievalConfig, build_db, format_description, load_db, query_topk_classes, save_db
from .vlm.backends import ClassificationRequest, MockKnowledge, make_backend

log = logging.getLogger("vitac")


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
        changes["train"] = dataclasses.replace(cfg.train, seed=args.seed)
    if args.out is not None:
        changes["output_dir"] = args.out
    backend = {k: v for k, v in (("kind", args.backend), ("endpoint", args.endpoint), ("model", args.model)) if v is not None}
    if backend:
        changes["backend"] = dataclasses.replace(cfg.backend, **backend)
    return cfg.replace(**changes) if changes else cfg


def _out(cfg: ExperimentConfig, name: str) -> Path:
    p = Path(cfg.output_dir) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    if args.kind == "reference":
        catalog = load_catalog_ref(args.catalog or cfg.reference_catalog)
        ds = generate_dataset(
            catalog, cfg.protocol, cfg.processes_per_object, cfg.seed,
            splits=reference_split_map(cfg, catalog), prep=cfg.prep,
        )
    else:
        catalog = load_catalog_ref(args.catalog or cfg.test_catalog)
        ds = generate_dataset(
            catalog, cfg.protocol, cfg.test_processes, test_seed(cfg),
            splits="test", augment_offsets=False, prep=cfg.prep,
        )
    seq_path = _out(cfg, f"{args.kind}_sequences.jsonl")
    raw_path = _out(cfg, f"{args.kind}_recordings.jsonl")
    write_sequences(seq_path, ds.sequences)
    write_recordings(raw_path, ds.recordings)
    print(f"wrote {len(ds.sequences)} sequences to {seq_path} and {len(ds.recordings)} recordings to {raw_path}")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    seqs = read_sequences(args.data or Path(cfg.output_dir) / "reference_sequences.jsonl")
    keep = set(train_classes(cfg, seqs))
    tr = [s for s in seqs if s.split == "train" and s.label in keep]
    va = [s for s in seqs if s.split == "val"]
    result = train(tr, va, cfg.net_config, cfg.train, cfg.prep)
    ckpt_path = _out(cfg, "checkpoint.npz")
    result.checkpoint.save(ckpt_path)
    _out(cfg, "history.json").write_text(json.dumps(result.history_dicts(), indent=1) + "\n")
    last = result.history[-1].train
    print(f"trained {result.history[-1].epoch} epochs (best {result.best_epoch}); final recon {last.recon:.5g}")
    print(f"checkpoint {ckpt_path} fingerprint {result.checkpoint.fingerprint()[:12]}")
    return 0


def cmd_build_db(cfg: ExperimentConfig, args) -> int:
    ckpt = Checkpoint.load(args.checkpoint or Path(cfg.output_dir) / "checkpoint.npz")
    seqs = read_sequences(args.data or Path(cfg.output_dir) / "reference_sequences.jsonl")
    descriptions = {o.label: o.description for o in load_catalog_ref(cfg.reference_catalog)}
    db = build_db(ckpt, seqs, descriptions, classes=db_classes(cfg, seqs), use_quantized=cfg.use_quantized)
    path = _out(cfg, "db.json")
    save_db(db, path)
    print(f"indexed {len(db)} embeddings over {len(db.classes)} classes into {path}")
    return 0


def cmd_classify(cfg: ExperimentConfig, args) -> int:
    test_cat = load_catalog_ref(cfg.test_catalog)
    ref_cat = load_catalog_ref(cfg.reference_catalog)
    seqs = read_sequences(args.data or Path(cfg.output_dir) / "test_sequences.jsonl")
    if not 0 <= args.index < len(seqs):
        raise IndexError(f"sample index {args.index} outside 0..{len(seqs) - 1}")
    seq = seqs[args.index]
    tags = {o.label: o.appearance_tag for o in test_cat}
    if seq.label not in tags:
        raise VitacError(f"sample label {seq.label!r} is not in the test catalog")
    topk, desc = [], None
    if not cfg.vision_only:
        ckpt = Checkpoint.load(args.checkpoint or Path(cfg.output_dir) / "checkpoint.npz")
        db = load_db(args.db or Path(cfg.output_dir) / "db.json", expect_fingerprint=ckpt.fingerprint())
        z = ckpt.encode([seq])[0]
        if cfg.use_quantized:
            z = ckpt.quantize(z[None])[0][0]
        topk = query_topk_classes(db, z, RetrievalConfig(k=cfg.top_k))
        desc = format_description([l for l, _ in topk], db.descriptions)
    req = ClassificationRequest(
        candidate_labels=tuple(tags),
        appearance_tag=tags[seq.label],
        image_ref=find_image(cfg.image_dir, seq.label),
        tactile_description=desc,
        reference_labels=tuple(l for l, _ in topk),
    )
    knowledge = MockKnowledge.from_catalogs(ref_cat, test_cat) if cfg.backend.kind == "mock" else None
    out = make_backend(cfg.backend, knowledge).classify(req)
    print(json.dumps({
        "sample_id": sample_id(seq.label, seq.process_id),
        "true_label": seq.label,
        "predicted_label": out.chosen_label,
        "parse_status": out.parse_status,
        "topk": topk,
        "description": desc,
        "raw_text": out.raw_text,
    }, indent=1))
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    report = run_pipeline(cfg, plot=not args.no_plot)
    failed = sum(r.parse_status == "error" for r in report.records)
    print(f"accuracy {report.accuracy:.4f} over {len(report.records)} samples ({failed} failed) -> {cfg.output_dir}/report.json")
    return 0


def cmd_grid(cfg: ExperimentConfig, args) -> int:
    cells = run_variant_grid(cfg, plot=not args.no_plot)
    for c in cells:
        acc = "failed" if c.accuracy is None else f"{100 * c.accuracy:.1f}"
        print(f"{c.variant:12s} {c.dataset:12s} {acc:>7s}  (published {c.published})")
    return 1 if any(c.error for c in cells) else 0


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    points = run_reference_ablation(cfg, plot=not args.no_plot)
    for p in points:
        print(f"|refs|={p.size:2d}  {100 * p.mean:5.1f} +- {100 * p.std:4.1f}  ({len(p.accuracies)} runs, {len(p.failures)} failed)")
    return 1 if any(p.failures for p in points) else 0


# ---------------------------------------------------------------- parser


def global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags with suppressed defaults so a flag
    # given before the subcommand is not reset by the subparser
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON", **kw)
    common.add_argument("--seed", type=int, help="seed for data generation and training", **kw)
    common.add_argument("--out", help="output directory", **kw)
    common.add_argument("--backend", choices=("mock", "http"), help="classifier backend", **kw)
    common.add_argument("--endpoint", help="chat-completions URL for the http backend", **kw)
    common.add_argument("--model", help="model name sent to the http backend", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="vitac", description="Visuo-tactile zero-shot recognition experiments.", parents=[global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate pushes and write JSONL datasets")
    g.add_argument("--kind", choices=("reference", "test"), default="reference")
    g.add_argument("--catalog", help="catalog JSON or builtin:<name>; defaults to the config's")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the embedding network")
    t.add_argument("--data", help="reference sequences JSONL")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("build-db", parents=[common], help="index reference embeddings")
    b.add_argument("--checkpoint")
    b.add_argument("--data", help="reference sequences JSONL")
    b.set_defaults(func=cmd_build_db)

    c = sub.add_parser("classify", parents=[common], help="classify one test sample")
    c.add_argument("--checkpoint")
    c.add_argument("--db")
    c.add_argument("--data", help="test sequences JSONL")
    c.add_argument("--index", type=int, default=0)
    c.set_defaults(func=cmd_classify)

    for name, func, text in (
        ("eval", cmd_eval, "run the full pipeline and write report.json"),
        ("grid", cmd_grid, "run the variant grid and write grid.csv"),
        ("ablate", cmd_ablate, "run the reference-count ablation and write ablation.csv"),
    ):
        e = sub.add_parser(name, parents=[common], help=text)
        e.add_argument("--no-plot", action="store_true", help="skip image outputs")
        e.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return args.func(cfg, args)
    except (VitacError, OSError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
