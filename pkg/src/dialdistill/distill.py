"""Knowledge-transfer losses.

Three channels move knowledge from a frozen teacher into the student: the
full-vocabulary output distribution, its top-k truncation, and the action
vector. Output targets are computed with teacher forcing on the gold
response, so student and teacher distributions align position by position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .corpus import UNIVERSAL, encode_belief_state, encode_db_pointer
from .model import encode_utterance, response_log_probs, teacher_action

MODES = ("none", "output_full", "output_topk", "policy", "all")
OUTPUT_MODES = ("output_full", "output_topk", "all")
POLICY_MODES = ("policy", "all")


@dataclass
class DistillConfig:
    alpha1: float = 0.01  # output-distillation weight
    alpha2: float = 0.05  # policy-distillation weight
    mode: str = "none"
    k: int = 128  # used when mode == "output_topk"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown distillation mode {self.mode!r}; choose from {MODES}")
        if not (math.isfinite(self.alpha1) and math.isfinite(self.alpha2)):
            raise ValueError("distillation weights must be finite")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("distillation weights must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def uses_output(self):
        return self.mode in OUTPUT_MODES

    @property
    def uses_policy(self):
        return self.mode in POLICY_MODES

    def to_dict(self):
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "mode": self.mode, "k": self.k}

    @classmethod
    def from_dict(cls, data):
        return cls(
            alpha1=float(data.get("alpha1", 0.01)),
            alpha2=float(data.get("alpha2", 0.05)),
            mode=data.get("mode", "none"),
            k=int(data.get("k", 128)),
        )


@dataclass
class DistillTargets:
    """Per-position teacher distributions plus the teacher action for one turn.

    ``support=None`` means dense rows over the whole vocabulary; otherwise
    ``support[i]`` holds the kept token ids for position ``i`` and
    ``probs[i]`` their renormalized probabilities.
    """

    probs: list | None
    support: list | None
    action: torch.Tensor


def topk_truncate(probs, k):
    """Keep the k most probable entries (ties to the lower index), renormalized.

    Zero-probability entries never enter the support, so the support size is
    min(k, number of nonzero entries).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, probs.shape[-1])
    order = torch.argsort(probs, descending=True, stable=True)
    ids = torch.sort(order[:k]).values
    kept = probs[ids]
    nonzero = kept > 0
    ids, kept = ids[nonzero], kept[nonzero]
    return ids, kept / kept.sum()


def teacher_targets(teacher, turn, ontology, vocab, mode, k=128):
    """Run the teacher on one turn and package its guidance.

    The teacher is forced with the gold response; each position yields either
    the full softmax or its top-k truncation. The teacher action vector
    always rides along. Routing a turn to the wrong domain's teacher is an
    error; the universal teacher accepts any tagged turn.
    """
    if mode not in MODES or mode == "none":
        raise ValueError(f"cannot build targets for mode {mode!r}")
    if teacher.domain != UNIVERSAL and turn.domain != teacher.domain:
        raise ValueError(f"turn tagged {turn.domain!r} routed to the {teacher.domain!r} teacher")
    scope = None if teacher.domain == UNIVERSAL else teacher.domain
    with torch.no_grad():
        enc = encode_utterance(teacher, vocab.encode(turn.user_tokens))
        v_b = encode_belief_state(turn.belief, ontology, scope)
        v_kb = encode_db_pointer(turn.db_count)
        action = teacher_action(teacher, enc.v_u, v_b, v_kb)
        rows = response_log_probs(teacher, action, enc.word_states, vocab.encode(turn.response_tokens)).exp()
    if mode in ("output_full", "all"):
        return DistillTargets(probs=list(rows), support=None, action=action)
    if mode == "output_topk":
        pairs = [topk_truncate(row, k) for row in rows]
        return DistillTargets(probs=[p for _, p in pairs], support=[i for i, _ in pairs], action=action)
    return DistillTargets(probs=None, support=None, action=action)


def output_distill_loss(student_log_probs, targets):
    """Teacher-probability-weighted student cross-entropy, position-averaged.

    loss = -(1/N) sum_i sum_w p_T(w) log p_S(w) over the target support.
    """
    if targets.probs is None:
        raise ValueError("targets carry no output distributions")
    if len(targets.probs) != student_log_probs.shape[0]:
        raise ValueError(
            f"student has {student_log_probs.shape[0]} positions, targets have {len(targets.probs)}"
        )
    per_position = []
    for i, p in enumerate(targets.probs):
        row = student_log_probs[i]
        if targets.support is not None:
            row = row[targets.support[i]]
        per_position.append(-(p * row).sum())
    return torch.stack(per_position).mean()


def policy_distill_loss(teacher_action_vec, student_action_vec):
    """Summed squared error between the two action vectors."""
    a_t = torch.as_tensor(teacher_action_vec)
    a_s = torch.as_tensor(student_action_vec)
    if a_t.shape != a_s.shape:
        raise ValueError(f"action shapes differ: {tuple(a_t.shape)} vs {tuple(a_s.shape)}")
    return ((a_t - a_s) ** 2).sum()


def combined_loss(nll_gold, kd_output, kd_policy, config):
    """Per-turn training loss under the configured mode; absent terms count 0."""
    total = nll_gold
    if config.uses_output and kd_output is not None:
        total = total + config.alpha1 * kd_output
    if config.uses_policy and kd_policy is not None:
        total = total + config.alpha2 * kd_policy
    return total
