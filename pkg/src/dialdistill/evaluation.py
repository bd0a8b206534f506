"""Corpus evaluation: sentence BLEU-4 plus episode-level Inform and Success.

Responses are delexicalized, so entity offers and requested properties are
detected through placeholder tokens. Every turn is generated independently
against the gold dialogue context (context-to-text), making scores
comparable across model families.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import torch

from .corpus import UNIVERSAL, encode_belief_state, encode_db_pointer, placeholder, query_db_count
from .model import StudentModel, encode_utterance, generate_response, student_action, teacher_action

# A response may excuse an unsatisfiable constrained domain with any of these.
APOLOGY_TOKENS = frozenset({"sorry"})

BLEU_SMOOTHING = "add-one on orders 2-4"


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision_counts(hypothesis, reference, n):
    """(clipped matches, total hypothesis n-grams) at order n."""
    hyp = _ngram_counts(hypothesis, n)
    ref = _ngram_counts(reference, n)
    matches = sum(min(count, ref[gram]) for gram, count in hyp.items())
    return matches, sum(hyp.values())


def bleu4_sentence(hypothesis, reference):
    """Sentence BLEU-4: uniform weights, brevity penalty, add-one smoothing
    on orders 2-4. An empty hypothesis (or one with no unigram overlap at
    all) scores 0."""
    if not reference:
        raise ValueError("reference must be non-empty")
    if not hypothesis:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        matches, total = modified_precision_counts(hypothesis, reference, n)
        if n == 1:
            if matches == 0:
                return 0.0
            p = matches / total
        else:
            p = (matches + 1) / (total + 1)
        log_sum += math.log(p) / 4.0
    brevity = 1.0 if len(hypothesis) >= len(reference) else math.exp(1.0 - len(reference) / len(hypothesis))
    return brevity * math.exp(log_sum)


def informed(episode, generated, database):
    """True iff every constrained goal domain was offered a suitable entity.

    Offering means some generated response carries the ``[domain_name]``
    placeholder. Domains whose constraints match nothing in the database are
    satisfied by an apology token as well.
    """
    if len(generated) != len(episode.turns):
        raise ValueError(
            f"episode {episode.episode_id!r}: {len(generated)} generated turns for {len(episode.turns)} gold turns"
        )
    for domain, goal in episode.goal.items():
        if not goal.constraints:
            continue
        annotation = {(domain, s): v for s, v in goal.constraints.items()}
        matches = query_db_count(annotation, database, domain)
        offered = any(placeholder(domain, "name") in response for response in generated)
        if matches > 0:
            if not offered:
                return False
        else:
            apologized = any(APOLOGY_TOKENS.intersection(response) for response in generated)
            if not (offered or apologized):
                return False
    return True


def succeeded(episode, generated, database):
    """True iff informed and every requested property placeholder was produced."""
    if not informed(episode, generated, database):
        return False
    for domain, goal in episode.goal.items():
        for prop in goal.requests:
            if not any(placeholder(domain, prop) in response for response in generated):
                return False
    return True


@dataclass
class EvalReport:
    bleu: float
    inform_rate: float  # percent
    success_rate: float  # percent
    per_episode: list = field(default_factory=list)

    def to_dict(self):
        return {
            "bleu": self.bleu,
            "inform": self.inform_rate,
            "success": self.success_rate,
            "per_episode": list(self.per_episode),
        }


def score_responses(episodes, responses, database):
    """Score pre-generated responses; ``responses[i]`` aligns with episode i."""
    per_episode = []
    bleus = []
    informed_count = 0
    succeeded_count = 0
    for episode, generated in zip(episodes, responses):
        turn_bleus = [
            bleu4_sentence(hyp, turn.response_tokens) for hyp, turn in zip(generated, episode.turns)
        ]
        was_informed = informed(episode, generated, database)
        was_succeeded = succeeded(episode, generated, database)
        informed_count += was_informed
        succeeded_count += was_succeeded
        bleus.extend(turn_bleus)
        per_episode.append(
            {
                "episode_id": episode.episode_id,
                "informed": was_informed,
                "succeeded": was_succeeded,
                "turn_bleu": turn_bleus,
            }
        )
    n = len(per_episode)
    return EvalReport(
        bleu=sum(bleus) / len(bleus) if bleus else 0.0,
        inform_rate=100.0 * informed_count / n if n else 0.0,
        success_rate=100.0 * succeeded_count / n if n else 0.0,
        per_episode=per_episode,
    )


def generate_episode_responses(model, episode, ontology, vocab, max_len=None):
    """Greedy responses for every turn, conditioned on the gold context.

    Students thread their context recurrence over the gold user utterances;
    teachers read each turn's labeled belief state and DB pointer.
    """
    responses = []
    with torch.no_grad():
        if isinstance(model, StudentModel):
            state = None
            for turn in episode.turns:
                enc = encode_utterance(model, vocab.encode(turn.user_tokens))
                action, state = student_action(model, enc.v_u, state)
                responses.append(vocab.decode(generate_response(model, action, enc.word_states, max_len)))
        else:
            scope = None if model.domain == UNIVERSAL else model.domain
            for turn in episode.turns:
                enc = encode_utterance(model, vocab.encode(turn.user_tokens))
                v_b = encode_belief_state(turn.belief, ontology, scope)
                v_kb = encode_db_pointer(turn.db_count)
                action = teacher_action(model, enc.v_u, v_b, v_kb)
                responses.append(vocab.decode(generate_response(model, action, enc.word_states, max_len)))
    return responses


def evaluate_corpus(model, episodes, database, ontology, vocab, max_len=None):
    """Generate and score the whole corpus; deterministic under greedy decoding."""
    torch.set_num_threads(1)
    responses = [generate_episode_responses(model, ep, ontology, vocab, max_len) for ep in episodes]
    return score_responses(episodes, responses, database)


def evaluate_gold_responses(episodes, database):
    """Score the gold responses against themselves (pipeline self-check)."""
    return score_responses(episodes, [[t.response_tokens for t in ep.turns] for ep in episodes], database)


def format_report_table(rows):
    """Aligned text table of (model tag, report) rows."""
    header = f"{'model':<24}{'BLEU':>8}{'Inform(%)':>12}{'Success(%)':>12}"
    lines = [header, "-" * len(header)]
    for tag, report in rows:
        lines.append(
            f"{tag:<24}{report.bleu:>8.4f}{report.inform_rate:>12.1f}{report.success_rate:>12.1f}"
        )
    return "\n".join(lines) + "\n"


def write_report(report, json_path, mode_tag, metadata=None):
    """Emit the JSON report plus an aligned text table next to it."""
    payload = report.to_dict()
    payload["metadata"] = {"model": mode_tag, "bleu_smoothing": BLEU_SMOOTHING, "decoding": "greedy"}
    if metadata:
        payload["metadata"].update(metadata)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    text_path = str(json_path)
    text_path = text_path[: -len(".json")] + ".txt" if text_path.endswith(".json") else text_path + ".txt"
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_report_table([(mode_tag, report)]))
    return text_path
