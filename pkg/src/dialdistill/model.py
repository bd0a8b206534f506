"""Recurrent dialogue generators.

Two model families share an utterance encoder, an attention decoder, and one
vocabulary. The student stacks a context-level recurrence over utterance
vectors to produce its action; the teacher maps the concatenation of the
utterance vector, a labeled belief vector, and the database pointer through a
bias-free tanh layer. Actions condition the decoder as its initial hidden
state; decoding is greedy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .corpus import BOS_ID, DB_POINTER_DIM, EOS_ID


@dataclass
class ModelConfig:
    embed_dim: int = 50
    hidden_dim: int = 150
    vocab_size: int = 400
    max_decode_len: int = 40
    max_encode_len: int = 200
    seed: int = 0

    def validate(self):
        if min(self.embed_dim, self.hidden_dim) < 1:
            raise ValueError("embed_dim and hidden_dim must be >= 1")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the four reserved tokens")
        if self.max_decode_len < 1 or self.max_encode_len < 1:
            raise ValueError("sequence length limits must be >= 1")

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "vocab_size": self.vocab_size,
            "max_decode_len": self.max_decode_len,
            "max_encode_len": self.max_encode_len,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: int(data[k]) for k in cls().to_dict() if k in data})


@dataclass
class UtteranceVector:
    """Final encoder state plus the per-word encoder outputs."""

    v_u: torch.Tensor  # (hidden_dim,)
    word_states: torch.Tensor  # (num_tokens, hidden_dim)


def _seed_uniform(module, seed):
    # uniform(-0.08, 0.08) over all parameters, in module definition order
    gen = torch.Generator()
    gen.manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-0.08, 0.08, generator=gen)


class StudentModel(nn.Module):
    """Tracker-free hierarchical generator: the action is a context recurrence
    over utterance vectors, so the model conditions on raw text alone."""

    def __init__(self, config, dtype=torch.float32):
        super().__init__()
        config.validate()
        self.config = config
        e, h, v = config.embed_dim, config.hidden_dim, config.vocab_size
        self.embedding = nn.Embedding(v, e)
        self.encoder = nn.LSTM(e, h, batch_first=True)
        self.context_cell = nn.LSTMCell(h, h)
        self.decoder_cell = nn.LSTMCell(e + h, h)
        self.out_proj = nn.Linear(h, v)
        _seed_uniform(self, config.seed)
        if dtype is not torch.float32:
            self.to(dtype)


class TeacherModel(nn.Module):
    """Turn-level generator conditioned on labeled state: the action is
    tanh(w . [v_u; v_b; v_kb]) with no recurrence across turns."""

    def __init__(self, config, belief_dim, domain, dtype=torch.float32):
        super().__init__()
        config.validate()
        if belief_dim < 1:
            raise ValueError("belief_dim must be >= 1")
        self.config = config
        self.belief_dim = belief_dim
        self.domain = domain
        e, h, v = config.embed_dim, config.hidden_dim, config.vocab_size
        self.embedding = nn.Embedding(v, e)
        self.encoder = nn.LSTM(e, h, batch_first=True)
        self.policy = nn.Linear(h + belief_dim + DB_POINTER_DIM, h, bias=False)
        self.decoder_cell = nn.LSTMCell(e + h, h)
        self.out_proj = nn.Linear(h, v)
        _seed_uniform(self, config.seed)
        if dtype is not torch.float32:
            self.to(dtype)


def encode_utterance(model, token_ids):
    """Run the utterance encoder from a zero initial state.

    Returns the final hidden state as ``v_u`` together with every per-word
    output (used as attention memory by the decoder).
    """
    n = len(token_ids)
    if n == 0:
        raise ValueError("cannot encode an empty token sequence")
    if n > model.config.max_encode_len:
        raise ValueError(f"utterance of {n} tokens exceeds max_encode_len {model.config.max_encode_len}")
    if any(t < 0 or t >= model.config.vocab_size for t in token_ids):
        raise ValueError("token id out of vocabulary range")
    ids = torch.tensor(list(token_ids), dtype=torch.long)
    emb = model.embedding(ids).unsqueeze(0)
    outputs, _ = model.encoder(emb)
    outputs = outputs[0]
    return UtteranceVector(v_u=outputs[-1], word_states=outputs)


def student_action(model, v_u, context_state=None):
    """Advance the context recurrence by one utterance.

    ``context_state=None`` is the reset state (fresh episode). The caller
    threads the returned state through the episode's turns.
    """
    if context_state is None:
        zeros = v_u.new_zeros(1, model.config.hidden_dim)
        context_state = (zeros, zeros)
    h, c = model.context_cell(v_u.unsqueeze(0), context_state)
    return h[0], (h, c)


def teacher_action(model, v_u, belief_vec, db_pointer):
    """tanh policy over the concatenated (utterance, belief, DB pointer) state."""
    v_b = torch.as_tensor(belief_vec, dtype=v_u.dtype)
    v_kb = torch.as_tensor(db_pointer, dtype=v_u.dtype)
    if v_b.shape != (model.belief_dim,):
        raise ValueError(f"belief vector has {tuple(v_b.shape)} entries, expected ({model.belief_dim},)")
    if v_kb.shape != (DB_POINTER_DIM,):
        raise ValueError(f"db pointer has {tuple(v_kb.shape)} entries, expected ({DB_POINTER_DIM},)")
    return torch.tanh(model.policy(torch.cat([v_u, v_b, v_kb])))


def attention(decoder_state, encoder_outputs):
    """Scaled dot-product attention; returns (context, weights)."""
    scores = encoder_outputs @ decoder_state / math.sqrt(decoder_state.shape[-1])
    weights = torch.softmax(scores, dim=0)
    return weights @ encoder_outputs, weights


def init_decoder(action):
    """Decoder start state: hidden = action, cell = zero."""
    return action.unsqueeze(0), torch.zeros_like(action).unsqueeze(0)


def decode_step(model, prev_token, decoder_state, encoder_outputs):
    """One decoder step on [embedding(prev); attention context]; returns logits."""
    h, c = decoder_state
    context, _ = attention(h[0], encoder_outputs)
    emb = model.embedding(torch.tensor([prev_token], dtype=torch.long))
    h2, c2 = model.decoder_cell(torch.cat([emb, context.unsqueeze(0)], dim=1), (h, c))
    return model.out_proj(h2)[0], (h2, c2)


def response_log_probs(model, action, encoder_outputs, response_ids):
    """Teacher-forced log-distributions over the gold response.

    Row ``i`` is the log-softmax over the vocabulary before emitting target
    ``i``; targets are the response ids followed by EOS, so the result has
    ``len(response_ids) + 1`` rows.
    """
    state = init_decoder(action)
    rows = []
    for tok in [BOS_ID] + list(response_ids):
        logits, state = decode_step(model, tok, state, encoder_outputs)
        rows.append(torch.log_softmax(logits, dim=-1))
    return torch.stack(rows)


def sequence_nll(log_probs, response_ids):
    """Mean negative log-likelihood of the response (EOS included)."""
    targets = torch.tensor(list(response_ids) + [EOS_ID], dtype=torch.long)
    if log_probs.shape[0] != targets.shape[0]:
        raise ValueError("log-probability rows misaligned with target length")
    return -log_probs[torch.arange(targets.shape[0]), targets].mean()


def generate_response(model, action, encoder_outputs, max_len=None):
    """Greedy decode from BOS until EOS or ``max_len``; BOS/EOS excluded."""
    if max_len is None:
        max_len = model.config.max_decode_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = init_decoder(action)
    prev = BOS_ID
    out = []
    for _ in range(max_len):
        logits, state = decode_step(model, prev, state, encoder_outputs)
        prev = int(torch.argmax(logits).item())
        if prev == EOS_ID:
            break
        out.append(prev)
    return out
