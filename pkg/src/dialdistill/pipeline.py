"""Dataset preparation: delexicalize, tag, split, build the vocabulary, and
write everything into a self-contained dataset directory.

Directory layout::

    ontology.json  database.json  vocab.json  manifest.json
    train.json  val.json  test.json
    domains/<domain>/{train,val,test}.json

The manifest records counts, the seed, and a sha256 per written file, so two
runs over identical inputs are directly comparable."""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field

from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocabulary,
    delexicalize,
    load_corpus,
    load_database,
    load_ontology,
    save_corpus,
    save_database,
    save_ontology,
    split_by_domain,
    tag_turn_domains,
    validate_episode,
)

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1

    def validate(self):
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be >= 0")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def to_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, data):
        return cls(
            train=float(data.get("train", 0.8)),
            val=float(data.get("val", 0.1)),
            test=float(data.get("test", 0.1)),
        )


def split_episodes(episodes, spec, seed):
    """Deterministic shuffled split into train/val/test lists."""
    spec.validate()
    order = list(range(len(episodes)))
    random.Random(seed).shuffle(order)
    n = len(order)
    n_train = int(n * spec.train)
    n_val = int(n * spec.val)
    parts = {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    return {name: [episodes[i] for i in indices] for name, indices in parts.items()}


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def prepare_dataset(out_dir, episodes, ontology, database, vocab_max_size=400, split=None, seed=0):
    """Run the preprocessing pipeline and write a dataset directory.

    Episodes are delexicalized, re-tagged (incoming tags are diagnostics
    only), re-validated against the database, split, and written alongside a
    train-split vocabulary. Returns the manifest dict.
    """
    split = split or SplitSpec()
    os.makedirs(out_dir, exist_ok=True)

    diagnostics = []
    retag_changed = 0
    processed = []
    for episode in episodes:
        incoming = [t.domain for t in episode.turns]
        tagged = tag_turn_domains(delexicalize(episode, ontology, database), ontology, diagnostics)
        retag_changed += sum(1 for old, new in zip(incoming, (t.domain for t in tagged.turns)) if old != new)
        validate_episode(tagged, ontology=ontology, database=database)
        processed.append(tagged)

    splits = split_episodes(processed, split, seed)
    vocab = build_vocabulary(splits["train"], max_size=vocab_max_size)

    save_ontology(os.path.join(out_dir, "ontology.json"), ontology)
    save_database(os.path.join(out_dir, "database.json"), database)
    with open(os.path.join(out_dir, "vocab.json"), "w", encoding="utf-8") as fh:
        json.dump(vocab.to_dict(), fh, indent=2)
        fh.write("\n")

    counts = {"episodes": {}, "turns": {}, "tagged_turns": {}, "none_turns": {}, "domains": {}}
    for name in SPLIT_NAMES:
        part = splits[name]
        save_corpus(os.path.join(out_dir, f"{name}.json"), part)
        turns = sum(len(ep.turns) for ep in part)
        tagged_turns = sum(1 for ep in part for t in ep.turns if t.domain is not None)
        counts["episodes"][name] = len(part)
        counts["turns"][name] = turns
        counts["tagged_turns"][name] = tagged_turns
        counts["none_turns"][name] = turns - tagged_turns

    for domain in ontology.domains:
        os.makedirs(os.path.join(out_dir, "domains", domain), exist_ok=True)
        counts["domains"][domain] = {}
    for name in SPLIT_NAMES:
        buckets = split_by_domain(splits[name])
        for domain in ontology.domains:
            part = buckets.get(domain, [])
            save_corpus(os.path.join(out_dir, "domains", domain, f"{name}.json"), part)
            counts["domains"][domain][name] = {
                "episodes": len(part),
                "turns": sum(len(ep.turns) for ep in part),
            }

    rel_paths = ["ontology.json", "database.json", "vocab.json"]
    rel_paths += [f"{name}.json" for name in SPLIT_NAMES]
    rel_paths += [f"domains/{d}/{name}.json" for d in ontology.domains for name in SPLIT_NAMES]
    manifest = {
        "seed": seed,
        "vocab_size": len(vocab),
        "split": split.to_dict(),
        "counts": counts,
        "ambiguous_turns": len(diagnostics),
        "retag_changed_turns": retag_changed,
        "checksums": {p: _sha256(os.path.join(out_dir, p)) for p in rel_paths},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


@dataclass
class PreparedDataset:
    ontology: object
    database: list
    vocab: Vocabulary
    splits: dict  # split name -> list of Episode
    domain_splits: dict  # domain -> split name -> list of Episode
    manifest: dict = field(default_factory=dict)

    def universal_split(self, name):
        """All per-domain episodes of a split, in ontology domain order."""
        return [ep for domain in self.ontology.domains for ep in self.domain_splits[domain][name]]


def load_dataset(data_dir):
    """Load a directory written by :func:`prepare_dataset`."""
    ontology_path = os.path.join(data_dir, "ontology.json")
    if not os.path.exists(ontology_path):
        raise CorpusError(f"{data_dir!r} is not a prepared dataset directory (no ontology.json)")
    ontology = load_ontology(ontology_path)
    database = load_database(os.path.join(data_dir, "database.json"), ontology)
    with open(os.path.join(data_dir, "vocab.json"), "r", encoding="utf-8") as fh:
        vocab = Vocabulary.from_dict(json.load(fh))
    splits = {
        name: load_corpus(os.path.join(data_dir, f"{name}.json"), ontology, database)
        for name in SPLIT_NAMES
    }
    domain_splits = {
        domain: {
            name: load_corpus(os.path.join(data_dir, "domains", domain, f"{name}.json"), ontology, database)
            for name in SPLIT_NAMES
        }
        for domain in ontology.domains
    }
    with open(os.path.join(data_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return PreparedDataset(
        ontology=ontology,
        database=database,
        vocab=vocab,
        splits=splits,
        domain_splits=domain_splits,
        manifest=manifest,
    )
