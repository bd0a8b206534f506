"""Training orchestration: per-domain teacher pre-training, checkpoint
selection, and student training with per-turn guidance routing.

Updates are episode-level: the context recurrence spans the episode, so one
optimizer step covers one episode (or ``batch_size`` episodes). All shuffling
draws from a dedicated seeded RNG and torch runs single-threaded, which makes
training logs and final parameters bit-reproducible."""

from __future__ import annotations

import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field

import torch

from .corpus import EOS_ID, UNIVERSAL, encode_belief_state, encode_db_pointer
from .distill import combined_loss, output_distill_loss, policy_distill_loss, teacher_targets
from .evaluation import evaluate_corpus
from .model import (
    StudentModel,
    TeacherModel,
    encode_utterance,
    response_log_probs,
    sequence_nll,
    student_action,
    teacher_action,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 1  # episodes per optimizer step
    grad_clip_norm: float = 5.0
    seed: int = 0
    patience: int = 0  # epochs of stagnant validation NLL before stopping; 0 disables

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "grad_clip_norm": self.grad_clip_norm,
            "seed": self.seed,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        for key in cfg.to_dict():
            if key in data:
                setattr(cfg, key, type(getattr(cfg, key))(data[key]))
        return cfg


@dataclass
class TeacherSet:
    """Frozen guidance models keyed by domain (or the UNIVERSAL key)."""

    by_domain: dict = field(default_factory=dict)

    def route(self, domain):
        """Domain teacher if present, else the universal one, else None."""
        if domain is None:
            return None
        return self.by_domain.get(domain) or self.by_domain.get(UNIVERSAL)


@dataclass
class EpochCheckpoint:
    epoch: int
    val_nll: float
    state: dict
    path: str | None = None


def make_optimizer(model, config):
    return torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps
    )


def optimizer_step(named_params, optimizer, clip_norm):
    """Clip the global gradient norm, take one Adam step, clear gradients.

    A NaN/Inf gradient aborts with the offending parameter's name before any
    parameter is touched. Clipping is exact (no epsilon in the denominator),
    so a gradient of norm 50 under clip 5 lands on norm 5 to float precision.
    """
    grads = []
    for name, param in named_params:
        if param.grad is None:
            continue
        if not torch.isfinite(param.grad).all():
            raise RuntimeError(f"NaN/Inf gradient in parameter {name!r}")
        grads.append(param.grad)
    total_norm = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads)) if grads else torch.tensor(0.0)
    if float(total_norm) > clip_norm:
        scale = clip_norm / total_norm
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    optimizer.step()
    optimizer.zero_grad()
    return float(total_norm)


def _teacher_turn_nll(model, turn, ontology, vocab):
    enc = encode_utterance(model, vocab.encode(turn.user_tokens))
    scope = None if model.domain == UNIVERSAL else model.domain
    v_b = encode_belief_state(turn.belief, ontology, scope)
    v_kb = encode_db_pointer(turn.db_count)
    action = teacher_action(model, enc.v_u, v_b, v_kb)
    response_ids = vocab.encode(turn.response_tokens)
    return sequence_nll(response_log_probs(model, action, enc.word_states, response_ids), response_ids)


def teacher_validation_nll(model, episodes, ontology, vocab):
    """Corpus-level per-token NLL under teacher forcing."""
    total, count = 0.0, 0
    with torch.no_grad():
        for episode in episodes:
            for turn in episode.turns:
                n = len(turn.response_tokens) + 1
                total += float(_teacher_turn_nll(model, turn, ontology, vocab)) * n
                count += n
    return total / count if count else math.nan


def student_validation_nll(model, episodes, vocab):
    total, count = 0.0, 0
    with torch.no_grad():
        for episode in episodes:
            state = None
            for turn in episode.turns:
                enc = encode_utterance(model, vocab.encode(turn.user_tokens))
                action, state = student_action(model, enc.v_u, state)
                response_ids = vocab.encode(turn.response_tokens)
                nll = sequence_nll(response_log_probs(model, action, enc.word_states, response_ids), response_ids)
                n = len(response_ids) + 1
                total += float(nll) * n
                count += n
    return total / count if count else math.nan


def _batches(order, batch_size):
    for i in range(0, len(order), batch_size):
        yield order[i : i + batch_size]


def train_teacher(
    episodes,
    ontology,
    vocab,
    domain,
    model_config,
    train_config,
    val_episodes=(),
    out_dir=None,
):
    """Pre-train one teacher on turn-level data of a single domain.

    Every epoch ends with a validation-NLL measurement and a parameter
    snapshot (also written under ``out_dir`` when given). Returns the model
    in its final-epoch state plus the per-epoch checkpoints and log rows.
    """
    from .checkpoint import save_checkpoint  # local import: checkpoint depends on model only

    train_config.validate()
    if not episodes:
        raise ValueError("no training episodes")
    for episode in episodes:
        for turn in episode.turns:
            if turn.domain is None:
                raise ValueError(f"episode {episode.episode_id!r} has an untagged turn")
            if domain != UNIVERSAL and turn.domain != domain:
                raise ValueError(
                    f"episode {episode.episode_id!r} is tagged {turn.domain!r}, not {domain!r}"
                )
    torch.set_num_threads(1)
    scope = None if domain == UNIVERSAL else domain
    model = TeacherModel(model_config, ontology.belief_dim(scope), domain)
    optimizer = make_optimizer(model, train_config)
    named = list(model.named_parameters())
    rng = random.Random(train_config.seed)
    order = list(range(len(episodes)))
    checkpoints, log_rows = [], []
    best_val, stale = math.inf, 0

    for epoch in range(1, train_config.epochs + 1):
        rng.shuffle(order)
        epoch_losses = []
        for batch in _batches(order, train_config.batch_size):
            losses = []
            for i in batch:
                turn_losses = [_teacher_turn_nll(model, t, ontology, vocab) for t in episodes[i].turns]
                losses.append(torch.stack(turn_losses).mean())
            loss = torch.stack(losses).mean()
            loss.backward()
            optimizer_step(named, optimizer, train_config.grad_clip_norm)
            epoch_losses.append(float(loss.detach()))
        train_nll = sum(epoch_losses) / len(epoch_losses)
        if val_episodes:
            val_nll = teacher_validation_nll(model, val_episodes, ontology, vocab)
        else:
            val_nll = train_nll
        state = {name: param.detach().clone() for name, param in named}
        path = None
        if out_dir is not None:
            path = f"{out_dir}/teacher_{domain}_epoch{epoch:03d}.ckpt"
            save_checkpoint(path, model, "teacher", vocab, ontology, domain=domain)
        checkpoints.append(EpochCheckpoint(epoch=epoch, val_nll=val_nll, state=state, path=path))
        log_rows.append({"epoch": epoch, "train_nll": train_nll, "val_nll": val_nll})
        if train_config.patience > 0:
            if val_nll < best_val:
                best_val, stale = val_nll, 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break
    return model, checkpoints, log_rows


def rank_candidates(candidates):
    """Index of the best candidate: highest val_success, ties by val_inform,
    then lower val_nll, then earlier epoch."""
    if not candidates:
        raise ValueError("no candidates to rank")
    return min(
        range(len(candidates)),
        key=lambda i: (
            -candidates[i]["val_success"],
            -candidates[i]["val_inform"],
            candidates[i]["val_nll"],
            candidates[i]["epoch"],
        ),
    )


def select_best_teacher(checkpoints, val_episodes, ontology, database, vocab, model_config, domain):
    """Pick the epoch checkpoint with the best validation Success rate.

    Ties break by Inform rate, then lower validation NLL, then earlier epoch.
    Returns the reloaded model and a selection record suitable for JSON.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    scope = None if domain == UNIVERSAL else domain
    model = TeacherModel(model_config, ontology.belief_dim(scope), domain)
    named = dict(model.named_parameters())
    candidates = []
    for ck in checkpoints:
        with torch.no_grad():
            for name, value in ck.state.items():
                named[name].copy_(value)
        report = evaluate_corpus(model, val_episodes, database, ontology, vocab)
        candidates.append(
            {
                "epoch": ck.epoch,
                "val_success": report.success_rate,
                "val_inform": report.inform_rate,
                "val_bleu": report.bleu,
                "val_nll": ck.val_nll,
            }
        )
    best = rank_candidates(candidates)
    with torch.no_grad():
        for name, value in checkpoints[best].state.items():
            named[name].copy_(value)
    record = {"domain": domain, "selected_epoch": candidates[best]["epoch"], "candidates": candidates}
    return model, record


def _freeze(model):
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)


def _prepare_guidance(episodes, teachers, distill_config, ontology, vocab):
    """Precompute per-turn token ids and (frozen-teacher) distillation targets."""
    needs_guidance = distill_config.mode != "none"
    prepared = []
    routed = Counter()
    none_turns = unrouted = 0
    warned = set()
    for episode in episodes:
        rows = []
        for turn in episode.turns:
            user_ids = vocab.encode(turn.user_tokens)
            response_ids = vocab.encode(turn.response_tokens)
            targets = None
            if turn.domain is None:
                none_turns += 1
            elif needs_guidance:
                teacher = teachers.route(turn.domain) if teachers else None
                if teacher is None:
                    unrouted += 1
                    if turn.domain not in warned:
                        logger.warning("no teacher for domain %r; NLL-only fallback", turn.domain)
                        warned.add(turn.domain)
                else:
                    targets = teacher_targets(
                        teacher, turn, ontology, vocab, distill_config.mode, distill_config.k
                    )
                    routed[teacher.domain] += 1
            rows.append((user_ids, response_ids, targets))
        prepared.append(rows)
    return prepared, dict(routed), none_turns, unrouted


def train_student(
    episodes,
    ontology,
    database,
    vocab,
    teachers,
    model_config,
    distill_config,
    train_config,
    val_episodes=(),
    log_path=None,
):
    """Train the tracker-free student, optionally guided by frozen teachers.

    Per turn the loss combines gold NLL with the configured distillation
    terms; untagged turns and turns whose domain has no teacher contribute
    NLL only. Teachers stay frozen: targets are computed once up front.
    Returns the trained model and the per-epoch log rows.
    """
    train_config.validate()
    distill_config.validate()
    if not episodes:
        raise ValueError("no training episodes")
    teacher_map = dict(teachers.by_domain) if teachers is not None else {}
    if distill_config.mode != "none" and not teacher_map:
        raise ValueError(f"distillation mode {distill_config.mode!r} requires teachers")
    for name, teacher in teacher_map.items():
        if teacher.config.hidden_dim != model_config.hidden_dim:
            raise ValueError(f"teacher {name!r} hidden_dim {teacher.config.hidden_dim} != {model_config.hidden_dim}")
        if teacher.config.vocab_size != model_config.vocab_size:
            raise ValueError(f"teacher {name!r} vocab_size {teacher.config.vocab_size} != {model_config.vocab_size}")
        _freeze(teacher)

    torch.set_num_threads(1)
    teacher_set = TeacherSet(by_domain=teacher_map)
    prepared, routed, none_turns, unrouted = _prepare_guidance(
        episodes, teacher_set, distill_config, ontology, vocab
    )
    total_turns = sum(len(ep.turns) for ep in episodes)

    model = StudentModel(model_config)
    optimizer = make_optimizer(model, train_config)
    named = list(model.named_parameters())
    rng = random.Random(train_config.seed)
    order = list(range(len(episodes)))
    log_rows = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    best_val, stale = math.inf, 0
    try:
        for epoch in range(1, train_config.epochs + 1):
            rng.shuffle(order)
            nll_values, kd_out_values, kd_pol_values = [], [], []
            for batch in _batches(order, train_config.batch_size):
                batch_losses = []
                for index in batch:
                    state = None
                    turn_losses = []
                    for user_ids, response_ids, targets in prepared[index]:
                        enc = encode_utterance(model, user_ids)
                        action, state = student_action(model, enc.v_u, state)
                        log_probs = response_log_probs(model, action, enc.word_states, response_ids)
                        nll = sequence_nll(log_probs, response_ids)
                        kd_out = kd_pol = None
                        if targets is not None:
                            if distill_config.uses_output:
                                kd_out = output_distill_loss(log_probs, targets)
                                kd_out_values.append(float(kd_out.detach()))
                            if distill_config.uses_policy:
                                kd_pol = policy_distill_loss(targets.action, action)
                                kd_pol_values.append(float(kd_pol.detach()))
                        turn_losses.append(combined_loss(nll, kd_out, kd_pol, distill_config))
                        nll_values.append(float(nll.detach()))
                    batch_losses.append(torch.stack(turn_losses).mean())
                loss = torch.stack(batch_losses).mean()
                loss.backward()
                optimizer_step(named, optimizer, train_config.grad_clip_norm)
            row = {
                "epoch": epoch,
                "nll": sum(nll_values) / len(nll_values),
                "kd_output": sum(kd_out_values) / len(kd_out_values) if kd_out_values else 0.0,
                "kd_policy": sum(kd_pol_values) / len(kd_pol_values) if kd_pol_values else 0.0,
                "routed": routed,
                "none_turns": none_turns,
                "unrouted_turns": unrouted,
                "total_turns": total_turns,
            }
            if val_episodes:
                report = evaluate_corpus(model, val_episodes, database, ontology, vocab)
                row["val_inform"] = report.inform_rate
                row["val_success"] = report.success_rate
                row["val_bleu"] = report.bleu
            else:
                row["val_inform"] = row["val_success"] = row["val_bleu"] = 0.0
            log_rows.append(row)
            if log_fh is not None:
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
                log_fh.flush()
            if train_config.patience > 0:
                val_nll = student_validation_nll(model, val_episodes, vocab) if val_episodes else row["nll"]
                if val_nll < best_val:
                    best_val, stale = val_nll, 0
                else:
                    stale += 1
                    if stale >= train_config.patience:
                        break
    finally:
        if log_fh is not None:
            log_fh.close()
    return model, log_rows
