"""Experiment configuration: one JSON file, overridable by CLI flags.

Every sub-config carries its own seed; when the file omits one, the
top-level experiment seed flows down, so a single recorded seed replays a
whole run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .distill import DistillConfig
from .model import ModelConfig
from .pipeline import SplitSpec
from .train import TrainConfig


@dataclass
class ExperimentConfig:
    corpus: str | None = None
    ontology: str | None = None
    database: str | None = None
    out_dir: str | None = None
    seed: int = 0
    mode_tag: str = "student"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def to_dict(self):
        return {
            "corpus": self.corpus,
            "ontology": self.ontology,
            "database": self.database,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "mode_tag": self.mode_tag,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "distill": self.distill.to_dict(),
            "split": self.split.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        seed = int(data.get("seed", 0))
        model = ModelConfig.from_dict(data.get("model", {}))
        if "seed" not in data.get("model", {}):
            model.seed = seed
        train = TrainConfig.from_dict(data.get("train", {}))
        if "seed" not in data.get("train", {}):
            train.seed = seed
        return cls(
            corpus=data.get("corpus"),
            ontology=data.get("ontology"),
            database=data.get("database"),
            out_dir=data.get("out_dir"),
            seed=seed,
            mode_tag=data.get("mode_tag", "student"),
            model=model,
            train=train,
            distill=DistillConfig.from_dict(data.get("distill", {})),
            split=SplitSpec.from_dict(data.get("split", {})),
        )


def dumps_config(config):
    """Canonical serialization; serialize -> parse -> serialize is a fixpoint."""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(path, config):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(config))
