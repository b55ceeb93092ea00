"""Experiment configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..embed.model import NetworkConfig
from ..embed.train import TrainConfig
from ..signal import PreprocessConfig
from ..sim import PushProtocolConfig
from ..vlm.backends import VlmBackendConfig

BUILTIN_PREFIX = "builtin:"
BUILTIN_NAMES = ("reference", "foodreplica", "cube")


@dataclass(frozen=True)
class ExperimentConfig:
    reference_catalog: str = "builtin:reference"
    test_catalog: str = "builtin:foodreplica"
    # None means the built-in validation labels that appear in the catalog
    val_labels: tuple[str, ...] | None = None
    output_dir: str = "runs/default"
    cache_dir: str | None = None  # defaults to <output_dir>/cache
    seed: int = 0
    processes_per_object: int = 10
    test_processes: int = 10
    vision_only: bool = False
    top_k: int = 3
    bottleneck: str = "vq"
    use_quantized: bool = False
    # restricts both the training classes and the database classes
    reference_classes: tuple[str, ...] | None = None
    include_val_in_db: bool = True
    ablation_sizes: tuple[int, ...] = (0, 6, 13, 20, 27)
    ablation_repeats: int = 5
    image_dir: str | None = None
    prep: PreprocessConfig = field(default_factory=PreprocessConfig)
    protocol: PushProtocolConfig = field(default_factory=PushProtocolConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: VlmBackendConfig = field(default_factory=VlmBackendConfig)

    def __post_init__(self):
        for name in ("val_labels", "reference_classes", "ablation_sizes"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.ablation_repeats < 1:
            raise ValueError("ablation_repeats must be >= 1")
        if self.processes_per_object < 1 or self.test_processes < 1:
            raise ValueError("process counts must be >= 1")
        if self.bottleneck not in ("vq", "betavae"):
            raise ValueError("bottleneck must be vq or betavae")
        for ref in (self.reference_catalog, self.test_catalog):
            check_catalog_ref(ref)
        if self.image_dir is not None and not Path(self.image_dir).is_dir():
            raise FileNotFoundError(f"image_dir {self.image_dir} does not exist")

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    @property
    def net_config(self) -> NetworkConfig:
        return dataclasses.replace(self.net, bottleneck=self.bottleneck)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def check_catalog_ref(ref: str) -> None:
    if ref.startswith(BUILTIN_PREFIX):
        if ref[len(BUILTIN_PREFIX):] not in BUILTIN_NAMES:
            raise ValueError(f"unknown built-in catalog {ref!r}; choose from {BUILTIN_NAMES}")
    elif not Path(ref).is_file():
        raise FileNotFoundError(f"catalog file {ref} does not exist")


def _build(cls, d: dict):
    """Instantiate a (possibly nested) config dataclass from plain JSON data."""
    if not isinstance(d, dict):
        raise TypeError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {unknown}")
    kwargs = {}
    for name, value in d.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp) and isinstance(value, dict):
            value = _build(tp, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def stable_hash(obj, n: int = 16) -> str:
    """Short content hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:n]


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return asdict(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot hash {type(o).__name__}")
