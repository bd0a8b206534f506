"""Deterministic synthetic corpora for desk-scale experiments.

Generates templated request/inform dialogues whose responses agree with the
goals and the database contents, so episode-level Inform and Success are
achievable by construction (gold responses score 100/100). Episodes come out
lexicalized and domain-tagged; the preparation pipeline re-derives both.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import DatabaseEntry, DomainGoal, Episode, Ontology, Turn, query_db_count, tokenize

DEFAULT_DOMAINS = {
    "restaurant": {
        "informable": {
            "food": ["italian", "chinese", "indian", "british"],
            "area": ["north", "south", "centre"],
        },
        "requestable": ["address", "phone"],
    },
    "hotel": {
        "informable": {
            "stars": ["two", "three", "four"],
            "price": ["cheap", "moderate", "expensive"],
        },
        "requestable": ["phone", "postcode"],
    },
}

_NAME_ADJECTIVES = [
    "golden", "silver", "royal", "blue", "green", "crimson", "old", "grand",
    "little", "happy", "quiet", "bright", "sunny", "lucky", "velvet", "ivory",
    "amber", "coral", "misty", "noble",
]
_NAME_NOUNS = [
    ["palace", "garden", "kitchen", "table", "spoon", "lantern", "orchid", "harvest"],
    ["lodge", "manor", "court", "towers", "retreat", "haven", "crown", "gables"],
    ["corner", "arch", "plaza", "loft", "yard", "dock", "gate", "spire"],
]
_STREETS = [
    ["mill", "bridge", "station", "park", "church"],
    ["castle", "abbey", "river", "trinity", "market"],
    ["elm", "maple", "cedar", "willow", "aspen"],
]

_GREET_USER = ["hello", "hi there", "good morning"]
_GREET_RESP = ["hello how can i help you today", "hi what can i do for you"]
_CLOSE_USER = ["thank you goodbye", "thanks that is all goodbye"]
_CLOSE_RESP = ["you are welcome goodbye", "glad to help goodbye"]
_ASK_USER = [
    "i am looking for a {domain} with {constraints}",
    "i need a {domain} with {constraints}",
    "can you find me a {domain} with {constraints}",
]
_OFFER_RESP = [
    "i recommend {name} a fine {domain} with {constraints}",
    "{name} is a great {domain} with {constraints}",
    "you could try {name} it is a {domain} with {constraints}",
]
_REQUEST_USER = [
    "what is the {requests}",
    "can i get the {requests}",
    "please give me the {requests}",
]
_INFO_RESP = ["{info}", "sure {info}", "of course {info}"]


@dataclass
class SynthesisConfig:
    """Knobs for the synthetic corpus generator.

    ``domains`` uses the ontology file shape. Informable values should be
    disjoint across domains or turn tagging becomes ambiguous on purpose.
    """

    domains: dict = field(default_factory=lambda: {d: dict(s) for d, s in DEFAULT_DOMAINS.items()})
    entities_per_domain: int = 12
    episodes_per_domain: int = 80
    two_domain_episodes: int = 40
    greeting_prob: float = 0.3
    closing_prob: float = 0.3

    def validate(self):
        if not self.domains:
            raise ValueError("synthesis config names no domains")
        for domain, spec in self.domains.items():
            slots = spec.get("informable", {})
            if not slots:
                raise ValueError(f"synthesis domain {domain!r} has no informable slots")
            for slot, values in slots.items():
                if len(values) < 2:
                    raise ValueError(f"synthesis slot {domain}.{slot} needs at least 2 values")
            if not spec.get("requestable"):
                raise ValueError(f"synthesis domain {domain!r} has no requestable properties")
        if self.entities_per_domain < 1:
            raise ValueError("entities_per_domain must be >= 1")
        if self.episodes_per_domain < 0 or self.two_domain_episodes < 0:
            raise ValueError("episode counts must be >= 0")
        if not (0.0 <= self.greeting_prob <= 1.0 and 0.0 <= self.closing_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.two_domain_episodes and len(self.domains) < 2:
            raise ValueError("two-domain episodes need at least 2 domains")

    def to_dict(self):
        return {
            "domains": {d: {k: v for k, v in spec.items()} for d, spec in self.domains.items()},
            "entities_per_domain": self.entities_per_domain,
            "episodes_per_domain": self.episodes_per_domain,
            "two_domain_episodes": self.two_domain_episodes,
            "greeting_prob": self.greeting_prob,
            "closing_prob": self.closing_prob,
        }

    @classmethod
    def from_dict(cls, data):
        cfg = cls(**{k: data[k] for k in data})
        return cfg


def _entity_name(rng, di, used):
    nouns = _NAME_NOUNS[di % len(_NAME_NOUNS)]
    while True:
        name = f"{rng.choice(_NAME_ADJECTIVES)} {rng.choice(nouns)}"
        if name not in used:
            used.add(name)
            return name


def _requestable_value(prop, di, ei):
    # Value spaces are kept disjoint across domains so delexicalization
    # never has to guess which domain a value belongs to.
    if "phone" in prop:
        return f"0{di + 1}223 {100000 + ei}"
    if "address" in prop:
        streets = _STREETS[di % len(_STREETS)]
        suffix = "road" if ei % 2 == 0 else "lane"
        return f"{ei + 1} {streets[ei % len(streets)]} {suffix}"
    return f"{prop}{di}{ei}"


def _make_database(config, ontology, rng):
    entries = []
    for di, domain in enumerate(ontology.domains):
        used_names = set()
        for ei in range(config.entities_per_domain):
            attributes = {"name": _entity_name(rng, di, used_names)}
            for slot, values in ontology.informable[domain].items():
                attributes[slot] = rng.choice(values)
            for prop in ontology.requestable[domain]:
                attributes[prop] = _requestable_value(prop, di, ei)
            entries.append(DatabaseEntry(domain=domain, entity_id=f"{domain}_{ei:03d}", attributes=attributes))
    return entries


def _domain_block(domain, ontology, database, rng, belief):
    """Two lexicalized turns serving one domain of the goal; mutates belief."""
    entities = [e for e in database if e.domain == domain]
    entity = rng.choice(entities)
    slots = list(ontology.informable[domain])
    chosen = rng.sample(slots, rng.randint(1, len(slots)))
    constraints = {s: entity.attributes[s] for s in chosen}
    props = list(ontology.requestable[domain])
    requests = rng.sample(props, rng.randint(1, len(props)))

    belief.update({(domain, s): v for s, v in constraints.items()})
    db_count = query_db_count(belief, database, domain)
    phrase = " and ".join(f"{s} {constraints[s]}" for s in chosen)

    ask = Turn(
        user_tokens=tokenize(rng.choice(_ASK_USER).format(domain=domain, constraints=phrase)),
        response_tokens=tokenize(
            rng.choice(_OFFER_RESP).format(name=entity.attributes["name"], domain=domain, constraints=phrase)
        ),
        domain=domain,
        belief=dict(belief),
        db_count=db_count,
    )
    info = " and ".join(f"the {p} is {entity.attributes[p]}" for p in requests)
    request = Turn(
        user_tokens=tokenize(rng.choice(_REQUEST_USER).format(requests=" and the ".join(requests))),
        response_tokens=tokenize(rng.choice(_INFO_RESP).format(info=info)),
        domain=domain,
        belief=dict(belief),
        db_count=db_count,
    )
    return [ask, request], DomainGoal(constraints=constraints, requests=requests)


def _make_episode(eid, block_domains, ontology, database, rng, config):
    turns = []
    goal = {}
    belief = {}
    if rng.random() < config.greeting_prob:
        turns.append(
            Turn(
                user_tokens=tokenize(rng.choice(_GREET_USER)),
                response_tokens=tokenize(rng.choice(_GREET_RESP)),
                domain=None,
                belief={},
                db_count=0,
            )
        )
    last_domain = None
    for domain in block_domains:
        block, domain_goal = _domain_block(domain, ontology, database, rng, belief)
        turns.extend(block)
        goal[domain] = domain_goal
        last_domain = domain
    if rng.random() < config.closing_prob:
        turns.append(
            Turn(
                user_tokens=tokenize(rng.choice(_CLOSE_USER)),
                response_tokens=tokenize(rng.choice(_CLOSE_RESP)),
                domain=last_domain,
                belief=dict(belief),
                db_count=query_db_count(belief, database, last_domain) if last_domain else 0,
            )
        )
    return Episode(episode_id=eid, goal=goal, turns=turns)


def generate_synthetic_corpus(config, seed):
    """Build (ontology, database, episodes), byte-reproducible from the seed."""
    config.validate()
    rng = random.Random(seed)
    ontology = Ontology.from_dict(config.domains)
    database = _make_database(config, ontology, rng)
    episodes = []
    n = 0
    for domain in ontology.domains:
        for _ in range(config.episodes_per_domain):
            episodes.append(_make_episode(f"syn{n:04d}", [domain], ontology, database, rng, config))
            n += 1
    for _ in range(config.two_domain_episodes):
        pair = rng.sample(list(ontology.domains), 2)
        episodes.append(_make_episode(f"syn{n:04d}", pair, ontology, database, rng, config))
        n += 1
    return ontology, database, episodes
