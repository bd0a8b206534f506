"""Corpus handling for multi-domain task-oriented dialogue.

Covers the JSON corpus/ontology/database formats, response delexicalization,
turn-level domain tagging and splitting, vocabulary construction, and the two
dense state encodings consumed by state-conditioned models: the per-slot
one-hot belief vector and the 6-bucket database match-count pointer.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby

import numpy as np

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED_TOKENS = (PAD, UNK, BOS, EOS)

DB_POINTER_DIM = 6

# Reserved teacher name for the single all-domain teacher; never a corpus domain.
UNIVERSAL = "universal"

_DOMAIN_RE = re.compile(r"^[a-z0-9]+$")
_NAME_RE = re.compile(r"^[a-z0-9_]+$")
_PLACEHOLDER_RE = re.compile(r"^\[([a-z0-9]+)_([a-z0-9_]+)\]$")


class CorpusError(ValueError):
    """A corpus, ontology, or database file violated its contract."""


def tokenize(text):
    """Lowercased whitespace tokenization; placeholders stay single tokens."""
    return text.lower().split()


def placeholder(domain, prop):
    return f"[{domain}_{prop}]"


def parse_placeholder(token):
    """Return (domain, property) if token looks like a placeholder, else None."""
    m = _PLACEHOLDER_RE.match(token)
    return (m.group(1), m.group(2)) if m else None


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Ontology:
    """Slot/value universe per domain.

    The serialization order of domains, slots and values is significant: it
    fixes the layout of every belief vector derived from this ontology, so it
    is preserved verbatim on load/save and recorded in checkpoints.
    """

    informable: dict  # domain -> slot -> list of value strings
    requestable: dict  # domain -> list of property names

    def __post_init__(self):
        self.validate()

    @property
    def domains(self):
        return tuple(self.informable)

    def validate(self):
        if not self.informable:
            raise CorpusError("ontology defines no domains")
        for domain, slots in self.informable.items():
            if not _DOMAIN_RE.match(domain):
                raise CorpusError(f"illegal domain name {domain!r}")
            if domain == UNIVERSAL:
                raise CorpusError(f"domain name {UNIVERSAL!r} is reserved")
            if not slots:
                raise CorpusError(f"domain {domain!r} has no informable slots")
            for slot, values in slots.items():
                if not _NAME_RE.match(slot):
                    raise CorpusError(f"illegal slot name {domain}.{slot}")
                if not values:
                    raise CorpusError(f"slot {domain}.{slot} has no values")
                if len(set(values)) != len(values):
                    raise CorpusError(f"slot {domain}.{slot} has duplicate values")
        for domain, props in self.requestable.items():
            if domain not in self.informable:
                raise CorpusError(f"requestable entry for unknown domain {domain!r}")
            for prop in props:
                if not _NAME_RE.match(prop):
                    raise CorpusError(f"illegal property name {domain}.{prop}")

    def values(self, domain, slot):
        try:
            return self.informable[domain][slot]
        except KeyError:
            raise CorpusError(f"unknown slot {domain}.{slot}") from None

    def belief_layout(self, domain_scope=None):
        """(domain, slot, values) blocks in serialization order.

        ``domain_scope=None`` spans every domain; a domain name restricts the
        layout to that domain's slots.
        """
        if domain_scope is None:
            domains = self.domains
        else:
            if domain_scope not in self.informable:
                raise CorpusError(f"unknown domain {domain_scope!r}")
            domains = (domain_scope,)
        return [(d, s, self.informable[d][s]) for d in domains for s in self.informable[d]]

    def belief_dim(self, domain_scope=None):
        return sum(len(values) + 1 for _, _, values in self.belief_layout(domain_scope))

    def to_dict(self):
        return {
            d: {
                "informable": {s: list(v) for s, v in slots.items()},
                "requestable": list(self.requestable.get(d, [])),
            }
            for d, slots in self.informable.items()
        }

    @classmethod
    def from_dict(cls, data):
        informable = {d: dict(spec.get("informable", {})) for d, spec in data.items()}
        requestable = {d: list(spec.get("requestable", [])) for d, spec in data.items()}
        return cls(informable=informable, requestable=requestable)


@dataclass
class DatabaseEntry:
    domain: str
    entity_id: str
    attributes: dict  # slot/property name -> value string

    def to_dict(self):
        return {"domain": self.domain, "entity_id": self.entity_id, "attributes": dict(self.attributes)}

    @classmethod
    def from_dict(cls, data):
        return cls(domain=data["domain"], entity_id=data["entity_id"], attributes=dict(data["attributes"]))


def validate_database(entries, ontology):
    seen = set()
    for entry in entries:
        if entry.domain not in ontology.informable:
            raise CorpusError(f"entity {entry.entity_id!r}: unknown domain {entry.domain!r}")
        if entry.entity_id in seen:
            raise CorpusError(f"duplicate entity_id {entry.entity_id!r}")
        seen.add(entry.entity_id)
        for slot in ontology.informable[entry.domain]:
            if slot not in entry.attributes:
                raise CorpusError(f"entity {entry.entity_id!r}: missing informable slot {slot!r}")
        for prop, value in entry.attributes.items():
            if "[" in value or "]" in value:
                raise CorpusError(f"entity {entry.entity_id!r}: value {value!r} collides with placeholder syntax")


@dataclass
class DomainGoal:
    constraints: dict = field(default_factory=dict)  # slot -> value
    requests: list = field(default_factory=list)  # property names

    def to_dict(self):
        return {"constraints": dict(self.constraints), "requests": list(self.requests)}

    @classmethod
    def from_dict(cls, data):
        return cls(constraints=dict(data.get("constraints", {})), requests=list(data.get("requests", [])))


@dataclass
class Turn:
    """One user/system exchange.

    ``belief`` is cumulative: it carries every constraint stated up to and
    including this turn, keyed by (domain, slot). ``db_count`` is the number
    of database entities matching this turn's domain constraints, precomputed
    at data-preparation time.
    """

    user_tokens: list
    response_tokens: list
    domain: str | None = None
    belief: dict = field(default_factory=dict)  # (domain, slot) -> value
    db_count: int = 0

    def to_dict(self):
        return {
            "user": " ".join(self.user_tokens),
            "response": " ".join(self.response_tokens),
            "domain": self.domain,
            "belief": {f"{d}-{s}": v for (d, s), v in self.belief.items()},
            "db_count": self.db_count,
        }

    @classmethod
    def from_dict(cls, data):
        belief = {}
        for key, value in data.get("belief", {}).items():
            if "-" not in key:
                raise CorpusError(f"belief key {key!r} is not of the form 'domain-slot'")
            d, s = key.split("-", 1)
            belief[(d, s)] = value
        return cls(
            user_tokens=tokenize(data["user"]),
            response_tokens=tokenize(data["response"]),
            domain=data.get("domain"),
            belief=belief,
            db_count=int(data.get("db_count", 0)),
        )


def _copy_turn(turn):
    return Turn(
        user_tokens=list(turn.user_tokens),
        response_tokens=list(turn.response_tokens),
        domain=turn.domain,
        belief=dict(turn.belief),
        db_count=turn.db_count,
    )


@dataclass
class Episode:
    episode_id: str
    goal: dict = field(default_factory=dict)  # domain -> DomainGoal
    turns: list = field(default_factory=list)

    def to_dict(self):
        return {
            "episode_id": self.episode_id,
            "goal": {d: g.to_dict() for d, g in self.goal.items()},
            "turns": [t.to_dict() for t in self.turns],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            episode_id = data["episode_id"]
            goal = {d: DomainGoal.from_dict(g) for d, g in data.get("goal", {}).items()}
            turns = [Turn.from_dict(t) for t in data["turns"]]
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"episode {data.get('episode_id', '?')!r}: malformed field: {exc}") from None
        return cls(episode_id=episode_id, goal=goal, turns=turns)


def _copy_episode(episode):
    return Episode(
        episode_id=episode.episode_id,
        goal={d: DomainGoal(dict(g.constraints), list(g.requests)) for d, g in episode.goal.items()},
        turns=[_copy_turn(t) for t in episode.turns],
    )


# ---------------------------------------------------------------------------
# file I/O


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_ontology(path):
    data = _read_json(path)
    if not isinstance(data, dict):
        raise CorpusError(f"{path}: ontology file must be a JSON object")
    return Ontology.from_dict(data)


def save_ontology(path, ontology):
    # No key sorting: serialization order defines the belief-vector layout.
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ontology.to_dict(), fh, indent=2)
        fh.write("\n")


def load_database(path, ontology=None):
    data = _read_json(path)
    if not isinstance(data, list):
        raise CorpusError(f"{path}: database file must be a JSON array")
    entries = [DatabaseEntry.from_dict(d) for d in data]
    if ontology is not None:
        validate_database(entries, ontology)
    return entries


def save_database(path, entries):
    # Entry and attribute order is preserved: it breaks delexicalization ties.
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([e.to_dict() for e in entries], fh, indent=2)
        fh.write("\n")


def load_corpus(path, ontology=None, database=None):
    """Load and validate a corpus file.

    ``ontology``/``database`` are optional validation context: with an
    ontology, goals and belief annotations are checked against it; with a
    database, the stored ``db_count`` of every tagged turn is re-checked
    against a live query.
    """
    data = _read_json(path)
    if not isinstance(data, list):
        raise CorpusError(f"{path}: corpus file must be a JSON array of episodes")
    episodes = [Episode.from_dict(d) for d in data]
    for episode in episodes:
        validate_episode(episode, ontology=ontology, database=database)
    return episodes


def save_corpus(path, episodes):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([e.to_dict() for e in episodes], fh, indent=2, sort_keys=True)
        fh.write("\n")


def validate_episode(episode, ontology=None, database=None):
    eid = episode.episode_id
    if not episode.turns:
        raise CorpusError(f"episode {eid!r}: field 'turns' is empty")
    if ontology is not None:
        for domain, goal in episode.goal.items():
            if domain not in ontology.informable:
                raise CorpusError(f"episode {eid!r}: goal names unknown domain {domain!r}")
            for slot in goal.constraints:
                if slot not in ontology.informable[domain]:
                    raise CorpusError(f"episode {eid!r}: goal names unknown slot {domain}.{slot}")
            for prop in goal.requests:
                if prop not in ontology.requestable.get(domain, []):
                    raise CorpusError(f"episode {eid!r}: goal requests unknown property {domain}.{prop}")
    for i, turn in enumerate(episode.turns):
        where = f"episode {eid!r}: turn {i}"
        if not turn.user_tokens:
            raise CorpusError(f"{where}: field 'user' is empty after preprocessing")
        if not turn.response_tokens:
            raise CorpusError(f"{where}: field 'response' is empty after preprocessing")
        if turn.db_count < 0:
            raise CorpusError(f"{where}: field 'db_count' is negative")
        if ontology is not None:
            if turn.domain is not None and turn.domain not in ontology.informable:
                raise CorpusError(f"{where}: unknown domain tag {turn.domain!r}")
            for (d, s), v in turn.belief.items():
                if d not in ontology.informable or s not in ontology.informable[d]:
                    raise CorpusError(f"{where}: belief names unknown slot {d}-{s}")
                if v not in ontology.informable[d][s]:
                    raise CorpusError(f"{where}: belief value {v!r} not in ontology for slot {d}-{s}")
        if database is not None and turn.domain is not None:
            expected = query_db_count(turn.belief, database, turn.domain)
            if turn.db_count != expected:
                raise CorpusError(
                    f"{where}: field 'db_count' is {turn.db_count} but the database query returns {expected}"
                )


# ---------------------------------------------------------------------------
# delexicalization and domain tagging


def _value_table(database):
    """Token n-gram -> placeholder; first writer (database order) wins ties."""
    table = {}
    for entry in database:
        for prop, value in entry.attributes.items():
            key = tuple(tokenize(value))
            if key and key not in table:
                table[key] = placeholder(entry.domain, prop)
    return table


def _scan_replace(tokens, table, max_n):
    out = []
    i = 0
    while i < len(tokens):
        hit = None
        for n in range(min(max_n, len(tokens) - i), 0, -1):
            repl = table.get(tuple(tokens[i : i + n]))
            if repl is not None:
                hit = (n, repl)
                break
        if hit is None:
            out.append(tokens[i])
            i += 1
        else:
            out.append(hit[1])
            i += hit[0]
    return out


def delexicalize(episode, ontology, database):
    """Replace database values in responses with ``[domain_property]`` tokens.

    Longest token match wins and matches never overlap; user turns pass
    through untouched. Placeholders cannot collide with raw values, so the
    operation is idempotent.
    """
    for entry in database:
        if entry.domain not in ontology.informable:
            raise CorpusError(f"entity {entry.entity_id!r}: unknown domain {entry.domain!r}")
    table = _value_table(database)
    max_n = max((len(k) for k in table), default=0)
    new = _copy_episode(episode)
    if max_n == 0:
        return new
    for turn in new.turns:
        turn.response_tokens = _scan_replace(turn.response_tokens, table, max_n)
    return new


def _mention_table(ontology):
    """Token n-gram -> set of domains it evidences (values and domain names)."""
    table = {}
    for domain in ontology.domains:
        table.setdefault((domain,), set()).add(domain)
        for values in ontology.informable[domain].values():
            for value in values:
                key = tuple(tokenize(value))
                if key:
                    table.setdefault(key, set()).add(domain)
    return table


def _mention_votes(tokens, ontology, table, max_n):
    votes = Counter()
    for token in tokens:
        ph = parse_placeholder(token)
        if ph and ph[0] in ontology.informable:
            votes[ph[0]] += 1
    i = 0
    while i < len(tokens):
        hit_len = 0
        for n in range(min(max_n, len(tokens) - i), 0, -1):
            domains = table.get(tuple(tokens[i : i + n]))
            if domains is not None:
                for d in domains:
                    votes[d] += 1
                hit_len = n
                break
        i += hit_len if hit_len else 1
    return votes


def tag_turn_domains(episode, ontology, diagnostics=None):
    """Assign one domain (or None) to every turn of a delexicalized episode.

    Priority: explicit mentions (placeholders, ontology values, domain names)
    beat belief-annotation deltas, which beat carrying the previous turn's
    tag forward; the first turn falls back to None. Ties go to the earliest
    domain in ontology order and are appended to ``diagnostics`` as
    ``(episode_id, turn_index, tied_domains)`` when a list is supplied.
    """
    table = _mention_table(ontology)
    max_n = max(len(k) for k in table)
    new = _copy_episode(episode)
    prev_domain = None
    prev_belief = {}
    for idx, turn in enumerate(new.turns):
        votes = _mention_votes(turn.user_tokens + turn.response_tokens, ontology, table, max_n)
        if not votes:
            for (d, s), v in turn.belief.items():
                if d in ontology.informable and prev_belief.get((d, s)) != v:
                    votes[d] += 1
        if votes:
            top = max(votes.values())
            tied = [d for d in ontology.domains if votes.get(d, 0) == top]
            if len(tied) > 1 and diagnostics is not None:
                diagnostics.append((new.episode_id, idx, tuple(tied)))
            domain = tied[0]
        else:
            domain = prev_domain
        turn.domain = domain
        prev_domain = domain
        prev_belief = turn.belief
    return new


def split_by_domain(episodes):
    """Cut episodes into per-domain sub-episodes of consecutive same-tag turns.

    Untagged turns are dropped. Each sub-episode keeps the parent goal entry
    for its own domain and gets an id of the form ``parent#<k>``.
    """
    buckets = {}
    for episode in episodes:
        k = 0
        for domain, group in groupby(episode.turns, key=lambda t: t.domain):
            turns = list(group)
            if domain is None:
                continue
            goal = episode.goal.get(domain, DomainGoal())
            sub = Episode(
                episode_id=f"{episode.episode_id}#{k}",
                goal={domain: DomainGoal(dict(goal.constraints), list(goal.requests))},
                turns=[_copy_turn(t) for t in turns],
            )
            buckets.setdefault(domain, []).append(sub)
            k += 1
    return buckets


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Frequency-ranked token inventory with fixed reserved ids 0-3."""

    tokens: list
    max_size: int = 400

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise CorpusError("reserved tokens must occupy ids 0-3")
        if len(self.tokens) > self.max_size:
            raise CorpusError(f"vocabulary of {len(self.tokens)} exceeds max_size {self.max_size}")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("vocabulary contains duplicate tokens")
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens):
        """Map tokens to ids; out-of-vocabulary tokens become UNK."""
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def to_dict(self):
        return {"tokens": list(self.tokens), "max_size": self.max_size}

    @classmethod
    def from_dict(cls, data):
        return cls(tokens=list(data["tokens"]), max_size=int(data["max_size"]))


def build_vocabulary(episodes, max_size=400):
    """Most-frequent tokens over user and response text, ties lexicographic."""
    if max_size < len(RESERVED_TOKENS) + 1:
        raise CorpusError("max_size must leave room for the four reserved tokens")
    counts = Counter()
    for episode in episodes:
        for turn in episode.turns:
            counts.update(turn.user_tokens)
            counts.update(turn.response_tokens)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    kept = sorted(counts, key=lambda t: (-counts[t], t))[: max_size - len(RESERVED_TOKENS)]
    return Vocabulary(tokens=list(RESERVED_TOKENS) + kept, max_size=max_size)


# ---------------------------------------------------------------------------
# state encodings


def encode_belief_state(annotation, ontology, domain_scope=None):
    """One-hot belief blocks in ontology layout order.

    Index 0 of each block means "not mentioned". With a single-domain scope,
    annotation entries for other domains are ignored; with the full scope
    (``domain_scope=None``) every annotated pair must be ontology-known.
    """
    layout = ontology.belief_layout(domain_scope)
    known = {(d, s) for d, s, _ in layout}
    for (d, s), v in annotation.items():
        if domain_scope is not None and d != domain_scope:
            continue
        if (d, s) not in known:
            raise CorpusError(f"unknown slot {d}.{s} in belief annotation")
        if v not in ontology.informable[d][s]:
            raise CorpusError(f"belief value {v!r} not legal for slot {d}.{s}")
    parts = []
    for d, s, values in layout:
        block = np.zeros(len(values) + 1, dtype=np.float32)
        v = annotation.get((d, s))
        block[0 if v is None else 1 + list(values).index(v)] = 1.0
        parts.append(block)
    return np.concatenate(parts)


def query_db_count(annotation, database, domain):
    """Count entities of ``domain`` matching its annotated constraints exactly."""
    constraints = {s: v for (d, s), v in annotation.items() if d == domain}
    count = 0
    for entry in database:
        if entry.domain != domain:
            continue
        if all(entry.attributes.get(s) == v for s, v in constraints.items()):
            count += 1
    return count


def encode_db_pointer(count):
    """6-bucket one-hot of the entity match count: 0, 1, 2, 3, 4, >4."""
    if count < 0:
        raise ValueError("count must be non-negative")
    vec = np.zeros(DB_POINTER_DIM, dtype=np.float32)
    vec[min(count, DB_POINTER_DIM - 1)] = 1.0
    return vec
