"""Declarative run configuration: one JSON document drives the whole pipeline.

Every field has a default; flags (and the RNN_SEED environment variable, for
the seed) override file values.  A stable hash of the resolved configuration
is embedded in every output artifact for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .graph import DEFAULT_CATEGORIES
from .model import ModelConfig


@dataclass
class PathsConfig:
    workdir: str = "run"
    graph: str = "run/graph.json"
    pois: str = "run/pois.csv"
    trajectories: str = "run/trajectories.csv"


@dataclass
class FeatureConfig:
    radius: float = 150.0
    sectors: int = 8
    categories: list = field(default_factory=lambda: list(DEFAULT_CATEGORIES))


@dataclass
class ProjectionConfig:
    search_radius: float = 50.0
    buffer_cap: float = 30.0
    buffer_frac: float = 0.4
    margin: float = 5.0
    v_max: float = 50.0
    windows: dict = field(default_factory=lambda: {
        "short": 14, "mid": 30, "long": 70, "extended": 128})


@dataclass
class EmbeddingConfig:
    dim: int = 64
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 40
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025


@dataclass
class TrainingConfig:
    batch_size: int = 16
    epochs: int = 10
    lr: float = 1e-4
    ratios: tuple = (0.8, 0.1, 0.1)


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.features.sectors < 1:
            raise ValueError("sectors must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        # feature geometry determines the model input width
        self.model.poi_dim = (5 + self.features.sectors + 1) * len(self.features.categories)
        self.model.d_s = self.embedding.dim
        self.model.seed = self.seed

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["training"]["ratios"] = list(self.training.ratios)
        return doc

    def hash(self) -> str:
        """Stable short hash of the resolved configuration.

        Worker count is excluded: parallelism must not change any output, so
        it is not part of an artifact's provenance identity.
        """
        doc = self.to_dict()
        doc.pop("workers")
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "paths": PathsConfig,
    "features": FeatureConfig,
    "projection": ProjectionConfig,
    "embedding": EmbeddingConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
}


def _build_section(cls, doc: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    if cls is TrainingConfig and "ratios" in doc:
        doc = dict(doc, ratios=tuple(doc["ratios"]))
    return cls(**doc)


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus override pairs.

    `overrides` maps dotted keys ("training.lr", "seed") to values; the
    RNN_SEED environment variable, when set, wins over both.
    """
    doc = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"seed", "workers"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, dict(doc.get(name, {})))
    kwargs["seed"] = int(doc.get("seed", 0))
    kwargs["workers"] = int(doc.get("workers", 1))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, fname = key.split(".", 1)
            if section not in kwargs:
                raise ValueError(f"unknown config section {section!r}")
            setattr(kwargs[section], fname, value)
        else:
            kwargs[key] = value
    env_seed = os.environ.get("RNN_SEED")
    if env_seed is not None:
        kwargs["seed"] = int(env_seed)
    return RunConfig(**kwargs)
