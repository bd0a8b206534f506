import json

import pytest

from dialdistill.config import ExperimentConfig, dumps_config, load_config, save_config
from dialdistill.pipeline import SplitSpec, load_dataset, prepare_dataset, split_episodes
from dialdistill.synthetic import SynthesisConfig, generate_synthetic_corpus


@pytest.fixture(scope="module")
def raw_corpus():
    cfg = SynthesisConfig(episodes_per_domain=10, two_domain_episodes=5, greeting_prob=0.4, closing_prob=0.4)
    return generate_synthetic_corpus(cfg, 31)


def _prepare(tmp_path, raw_corpus, name="data", seed=31):
    ontology, database, episodes = raw_corpus
    out = tmp_path / name
    manifest = prepare_dataset(str(out), episodes, ontology, database, seed=seed)
    return out, manifest


def test_split_episodes_fractions():
    episodes = list(range(10))
    parts = split_episodes(episodes, SplitSpec(), seed=1)
    assert [len(parts[k]) for k in ("train", "val", "test")] == [8, 1, 1]
    assert sorted(parts["train"] + parts["val"] + parts["test"]) == episodes


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(train=0.9, val=0.2, test=0.1).validate()


def test_prepare_writes_consistent_manifest(tmp_path, raw_corpus):
    out, manifest = _prepare(tmp_path, raw_corpus)
    counts = manifest["counts"]
    for split in ("train", "val", "test"):
        domain_turns = sum(counts["domains"][d][split]["turns"] for d in counts["domains"])
        assert domain_turns == counts["tagged_turns"][split]
        assert counts["tagged_turns"][split] + counts["none_turns"][split] == counts["turns"][split]
    assert manifest["ambiguous_turns"] == 0
    assert (out / "manifest.json").exists()


def test_prepare_deterministic_bytes(tmp_path, raw_corpus):
    out_a, manifest_a = _prepare(tmp_path, raw_corpus, "a")
    out_b, manifest_b = _prepare(tmp_path, raw_corpus, "b")
    assert manifest_a["checksums"] == manifest_b["checksums"]
    for rel in manifest_a["checksums"]:
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes()


def test_load_dataset_round_trip(tmp_path, raw_corpus):
    out, manifest = _prepare(tmp_path, raw_corpus)
    dataset = load_dataset(str(out))
    assert {k: len(v) for k, v in dataset.splits.items()} == manifest["counts"]["episodes"]
    assert len(dataset.vocab) == manifest["vocab_size"]
    for domain in dataset.ontology.domains:
        for split in ("train", "val", "test"):
            got = sum(len(ep.turns) for ep in dataset.domain_splits[domain][split])
            assert got == manifest["counts"]["domains"][domain][split]["turns"]
    universal = dataset.universal_split("train")
    per_domain = sum(len(dataset.domain_splits[d]["train"]) for d in dataset.ontology.domains)
    assert len(universal) == per_domain


def test_load_dataset_rejects_non_dataset_dir(tmp_path):
    with pytest.raises(Exception, match="ontology.json"):
        load_dataset(str(tmp_path))


def test_prepared_corpus_is_delexicalized_and_tagged(tmp_path, raw_corpus):
    out, _ = _prepare(tmp_path, raw_corpus)
    dataset = load_dataset(str(out))
    placeholders = 0
    for episode in dataset.splits["train"]:
        for turn in episode.turns:
            placeholders += sum(1 for t in turn.response_tokens if t.startswith("["))
    assert placeholders > 0


# ---------------------------------------------------------------------------
# experiment config


def test_config_round_trip_is_byte_identical(tmp_path):
    config = ExperimentConfig(corpus="c.json", seed=9, mode_tag="all")
    config.distill.mode = "output_topk"
    config.distill.k = 32
    text = dumps_config(config)
    path = tmp_path / "config.json"
    path.write_text(text)
    reparsed = load_config(str(path))
    assert dumps_config(reparsed) == text
    assert reparsed == config


def test_config_seed_flows_into_subconfigs(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 42, "model": {"hidden_dim": 32}, "train": {"epochs": 3}}))
    config = load_config(str(path))
    assert config.model.seed == 42
    assert config.train.seed == 42
    assert config.model.hidden_dim == 32
    path.write_text(json.dumps({"seed": 42, "model": {"seed": 5}}))
    assert load_config(str(path)).model.seed == 5


def test_save_config(tmp_path):
    path = tmp_path / "config.json"
    save_config(str(path), ExperimentConfig())
    assert load_config(str(path)) == ExperimentConfig()
