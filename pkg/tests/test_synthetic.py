import json

import pytest

from dialdistill.corpus import delexicalize, tag_turn_domains, validate_episode
from dialdistill.evaluation import evaluate_gold_responses
from dialdistill.synthetic import SynthesisConfig, generate_synthetic_corpus


def _corpus_fingerprint(ontology, database, episodes):
    return json.dumps(
        {
            "ontology": ontology.to_dict(),
            "database": [e.to_dict() for e in database],
            "episodes": [e.to_dict() for e in episodes],
        },
        sort_keys=True,
    )


def test_same_seed_is_byte_identical():
    a = generate_synthetic_corpus(SynthesisConfig(episodes_per_domain=6, two_domain_episodes=3), 11)
    b = generate_synthetic_corpus(SynthesisConfig(episodes_per_domain=6, two_domain_episodes=3), 11)
    assert _corpus_fingerprint(*a) == _corpus_fingerprint(*b)


def test_different_seeds_differ():
    a = generate_synthetic_corpus(SynthesisConfig(episodes_per_domain=6, two_domain_episodes=3), 11)
    b = generate_synthetic_corpus(SynthesisConfig(episodes_per_domain=6, two_domain_episodes=3), 12)
    assert _corpus_fingerprint(*a) != _corpus_fingerprint(*b)


def test_two_domains_five_each():
    ontology, _, episodes = generate_synthetic_corpus(
        SynthesisConfig(episodes_per_domain=5, two_domain_episodes=0), 3
    )
    assert len(episodes) == 10
    tags = {t.domain for ep in episodes for t in ep.turns if t.domain}
    assert tags == set(ontology.domains) == {"restaurant", "hotel"}


def test_two_domain_episodes_cover_two_domains():
    _, _, episodes = generate_synthetic_corpus(
        SynthesisConfig(episodes_per_domain=0, two_domain_episodes=4), 3
    )
    for episode in episodes:
        assert len(episode.goal) == 2


def test_generated_episodes_validate_against_database():
    ontology, database, episodes = generate_synthetic_corpus(
        SynthesisConfig(episodes_per_domain=6, two_domain_episodes=3), 5
    )
    for episode in episodes:
        validate_episode(episode, ontology=ontology, database=database)


def test_retagging_reproduces_generator_intent():
    ontology, database, episodes = generate_synthetic_corpus(
        SynthesisConfig(episodes_per_domain=8, two_domain_episodes=4), 9
    )
    diagnostics = []
    for episode in episodes:
        tagged = tag_turn_domains(delexicalize(episode, ontology, database), ontology, diagnostics)
        assert [t.domain for t in tagged.turns] == [t.domain for t in episode.turns]
    assert diagnostics == []


def test_gold_responses_reach_full_inform_and_success():
    # self-consistency oracle: prepared gold responses must score 100/100
    ontology, database, episodes = generate_synthetic_corpus(
        SynthesisConfig(episodes_per_domain=8, two_domain_episodes=4), 13
    )
    prepared = [tag_turn_domains(delexicalize(e, ontology, database), ontology) for e in episodes]
    report = evaluate_gold_responses(prepared, database)
    assert report.inform_rate == 100.0
    assert report.success_rate == 100.0
    assert report.bleu == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SynthesisConfig(domains={}), 0)
    bad = SynthesisConfig()
    bad.domains = {"shop": {"informable": {"kind": ["books"]}, "requestable": ["phone"]}}
    with pytest.raises(ValueError, match="at least 2 values"):
        generate_synthetic_corpus(bad, 0)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SynthesisConfig(entities_per_domain=0), 0)
