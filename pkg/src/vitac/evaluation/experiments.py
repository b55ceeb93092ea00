"""Variant grid and reference-class-count ablation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .pipeline import load_catalog_ref, reference_split_map, run_pipeline

log = logging.getLogger(__name__)

GRID_DATASETS = ("foodreplica", "cube")

# (name, overrides) in table order
GRID_VARIANTS = (
    ("vision_only", {"vision_only": True}),
    ("betavae", {"bottleneck": "betavae", "top_k": 3}),
    ("top1", {"top_k": 1}),
    ("full", {"top_k": 3}),
)

# published accuracies (%) for each variant, FoodReplica then Cube
PUBLISHED = {
    "vision_only": (53.6, 50.0),
    "betavae": (52.5, 50.0),
    "top1": (58.4, 52.5),
    "full": (58.9, 65.0),
}


@dataclass
class GridCell:
    variant: str
    dataset: str
    accuracy: float | None
    published: float | None
    error: str | None = None


def run_variant_grid(cfg: ExperimentConfig, *, plot: bool = False) -> list[GridCell]:
    """Run every variant on every dataset, sharing one cache.

    A failing cell is recorded with its error and the grid moves on.
    """
    root = Path(cfg.output_dir)
    cache = str(cfg.cache_path)
    cells = []
    for vname, overrides in GRID_VARIANTS:
        for j, ds in enumerate(GRID_DATASETS):
            cell_cfg = cfg.replace(
                test_catalog=f"builtin:{ds}",
                output_dir=str(root / "grid" / f"{vname}-{ds}"),
                cache_dir=cache,
                **overrides,
            )
            try:
                acc = run_pipeline(cell_cfg, plot=plot).accuracy
                err = None
            except Exception as exc:
                log.error("grid cell %s/%s failed: %s", vname, ds, exc)
                acc, err = None, f"{type(exc).__name__}: {exc}"
            cells.append(GridCell(vname, ds, acc, PUBLISHED[vname][j], err))
    write_grid_csv(cells, root / "grid.csv")
    return cells


def write_grid_csv(cells: list[GridCell], path: str | Path) -> None:
    """One row per variant, one accuracy column per dataset, published values alongside."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    by = {(c.variant, c.dataset): c for c in cells}
    variants = list(dict.fromkeys(c.variant for c in cells))
    datasets = list(dict.fromkeys(c.dataset for c in cells))
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", *(f"{d}_accuracy" for d in datasets), *(f"{d}_published" for d in datasets), "errors"])
        for v in variants:
            row = [v]
            for d in datasets:
                c = by.get((v, d))
                row.append("" if c is None or c.accuracy is None else f"{100 * c.accuracy:.1f}")
            for d in datasets:
                c = by.get((v, d))
                row.append("" if c is None or c.published is None else f"{c.published:.1f}")
            errs = [f"{d}: {by[(v, d)].error}" for d in datasets if (v, d) in by and by[(v, d)].error]
            w.writerow([*row, "; ".join(errs)])


# ---------------------------------------------------------------- ablation


@dataclass
class AblationPoint:
    size: int
    accuracies: list[float] = field(default_factory=list)
    subsets: list[list[str]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "mean": self.mean,
            "std": self.std,
            "completed": len(self.accuracies),
            "accuracies": self.accuracies,
            "subsets": self.subsets,
            "failures": self.failures,
        }


def ablation_subsets(train_labels: list[str], size: int, repeats: int, seed: int) -> list[list[str]]:
    """Seeded random class subsets; one full set when ``size`` covers every class."""
    labels = sorted(train_labels)
    if size > len(labels):
        raise ValueError(f"subset size {size} exceeds the {len(labels)} training classes")
    if size == len(labels):
        return [labels]
    rng = np.random.default_rng([seed, size])
    return [sorted(rng.choice(labels, size=size, replace=False).tolist()) for _ in range(repeats)]


def run_reference_ablation(cfg: ExperimentConfig, *, plot: bool = True) -> list[AblationPoint]:
    """Accuracy against the number of reference classes.

    Size 0 is the vision-only run. Every other size trains a fresh network on
    the chosen subset and indexes only that subset (validation classes stay
    out of the database). Partial subsets are drawn ``ablation_repeats`` times.
    """
    root = Path(cfg.output_dir)
    cache = str(cfg.cache_path)
    ref_cat = load_catalog_ref(cfg.reference_catalog)
    splits = reference_split_map(cfg, ref_cat)
    train_labels = [l for l, s in splits.items() if s == "train"]

    points = []
    for size in cfg.ablation_sizes:
        point = AblationPoint(size)
        if size == 0:
            runs = [(None, cfg.replace(vision_only=True))]
        else:
            subsets = ablation_subsets(train_labels, size, cfg.ablation_repeats, cfg.seed)
            runs = [
                (
                    sub,
                    cfg.replace(
                        vision_only=False,
                        reference_classes=tuple(sub),
                        include_val_in_db=False,
                        train=_train_seed(cfg, r),
                    ),
                )
                for r, sub in enumerate(subsets)
            ]
        for r, (sub, run_cfg) in enumerate(runs):
            run_cfg = run_cfg.replace(cache_dir=cache, output_dir=str(root / "ablation" / f"size{size:02d}-rep{r}"))
            try:
                point.accuracies.append(run_pipeline(run_cfg, plot=False).accuracy)
                point.subsets.append(sub or [])
            except Exception as exc:
                log.error("ablation size %d repeat %d failed: %s", size, r, exc)
                point.failures.append(f"repeat {r}: {type(exc).__name__}: {exc}")
        points.append(point)

    write_ablation(points, root)
    if plot:
        plot_ablation(points, root / "ablation.png")
    return points


def _train_seed(cfg: ExperimentConfig, repeat: int):
    return replace(cfg.train, seed=cfg.train.seed + repeat)


def write_ablation(points: list[AblationPoint], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "ablation.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["num_reference_classes", "mean_accuracy", "std_accuracy", "completed_runs", "failed_runs"])
        for p in points:
            w.writerow([p.size, f"{p.mean:.4f}", f"{p.std:.4f}", len(p.accuracies), len(p.failures)])
    doc = {"retrained_per_repeat": True, "points": [p.to_dict() for p in points]}
    (out / "ablation.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def plot_ablation(points: list[AblationPoint], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    done = [p for p in points if p.accuracies]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar([p.size for p in done], [100 * p.mean for p in done], yerr=[100 * p.std for p in done],
                marker="o", capsize=4)
    ax.set_xlabel("number of reference classes")
    ax.set_ylabel("accuracy (%)")
    ax.set_xticks([p.size for p in points])
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
