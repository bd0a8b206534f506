import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dialdistill.corpus import RESERVED_TOKENS, UNIVERSAL, Vocabulary
from dialdistill.distill import (
    DistillConfig,
    DistillTargets,
    combined_loss,
    output_distill_loss,
    policy_distill_loss,
    teacher_targets,
    topk_truncate,
)
from dialdistill.model import ModelConfig, TeacherModel
from conftest import make_turn

E = math.e


def test_config_modes_and_validation():
    config = DistillConfig(mode="all")
    assert config.uses_output and config.uses_policy
    assert not DistillConfig(mode="policy").uses_output
    assert not DistillConfig(mode="output_topk").uses_policy
    with pytest.raises(ValueError):
        DistillConfig(mode="banana")
    with pytest.raises(ValueError):
        DistillConfig(alpha1=-0.5)
    with pytest.raises(ValueError):
        DistillConfig(k=0)


def test_topk_hand_computed():
    probs = torch.softmax(torch.tensor([2.0, 1.0, 0.0, -1.0], dtype=torch.float64), dim=0)
    ids, kept = topk_truncate(probs, 2)
    assert ids.tolist() == [0, 1]
    # renormalized top-2 of softmax([2,1,0,-1]) is (e/(e+1), 1/(e+1))
    assert abs(float(kept[0]) - E / (E + 1)) < 1e-12
    assert abs(float(kept[1]) - 1 / (E + 1)) < 1e-12


def test_topk_full_width_is_identity():
    probs = torch.softmax(torch.randn(9, dtype=torch.float64), dim=0)
    ids, kept = topk_truncate(probs, 9)
    assert ids.tolist() == list(range(9))
    assert torch.allclose(kept, probs)


def test_topk_one_hot_unchanged():
    probs = torch.zeros(6, dtype=torch.float64)
    probs[3] = 1.0
    for k in (1, 3, 6):
        ids, kept = topk_truncate(probs, k)
        assert ids.tolist() == [3]
        assert kept.tolist() == [1.0]


def test_topk_ties_keep_lower_index():
    probs = torch.tensor([0.25, 0.25, 0.25, 0.25], dtype=torch.float64)
    ids, _ = topk_truncate(probs, 2)
    assert ids.tolist() == [0, 1]


@settings(max_examples=50, deadline=None)
@given(
    logits=st.lists(st.floats(-8, 8), min_size=2, max_size=16),
    k=st.integers(min_value=1, max_value=16),
)
def test_topk_sums_to_one_and_support_bound(logits, k):
    probs = torch.softmax(torch.tensor(logits, dtype=torch.float64), dim=0)
    ids, kept = topk_truncate(probs, k)
    assert abs(float(kept.sum()) - 1.0) < 1e-9
    assert len(ids) == min(k, int((probs > 0).sum()))


# ---------------------------------------------------------------------------
# losses


def _dense_targets(rows):
    return DistillTargets(probs=[r for r in rows], support=None, action=torch.zeros(2))


def test_output_loss_one_hot_targets_equal_gold_nll():
    log_probs = torch.log_softmax(torch.randn(3, 5, dtype=torch.float64), dim=1)
    gold = [2, 0, 4]
    rows = []
    for g in gold:
        row = torch.zeros(5, dtype=torch.float64)
        row[g] = 1.0
        rows.append(row)
    loss = output_distill_loss(log_probs, _dense_targets(rows))
    nll = -log_probs[torch.arange(3), torch.tensor(gold)].mean()
    assert torch.allclose(loss, nll)


def test_output_loss_uniform_student_is_log4():
    log_probs = torch.full((2, 4), math.log(0.25), dtype=torch.float64)
    rows = [torch.tensor([0.5, 0.5, 0.0, 0.0], dtype=torch.float64)] * 2
    loss = output_distill_loss(log_probs, _dense_targets(rows))
    assert abs(float(loss) - math.log(4)) < 1e-12


def test_output_loss_matching_distributions_equal_entropy():
    probs = torch.softmax(torch.randn(4, 6, dtype=torch.float64), dim=1)
    loss = output_distill_loss(probs.log(), _dense_targets(list(probs)))
    entropy = -(probs * probs.log()).sum(dim=1).mean()
    assert torch.allclose(loss, entropy)


def test_output_loss_misaligned_positions():
    log_probs = torch.log_softmax(torch.randn(2, 5), dim=1)
    with pytest.raises(ValueError):
        output_distill_loss(log_probs, _dense_targets([torch.ones(5) / 5] * 3))


@settings(max_examples=40, deadline=None)
@given(
    t_logits=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
    s_logits=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
)
def test_output_loss_respects_gibbs_inequality(t_logits, s_logits):
    teacher = torch.softmax(torch.tensor(t_logits, dtype=torch.float64), dim=0)
    student = torch.log_softmax(torch.tensor(s_logits, dtype=torch.float64), dim=0)
    loss = float(output_distill_loss(student.unsqueeze(0), _dense_targets([teacher])))
    entropy = float(-(teacher * teacher.log()).sum())
    assert loss >= entropy - 1e-9


def test_policy_loss_examples():
    assert float(policy_distill_loss(torch.tensor([1.0, 2.0]), torch.tensor([1.0, 2.0]))) == 0.0
    assert float(policy_distill_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == 2.0
    with pytest.raises(ValueError):
        policy_distill_loss(torch.zeros(3), torch.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_policy_loss_symmetric_and_nonnegative(values):
    a = torch.tensor(values, dtype=torch.float64)
    b = torch.flip(a, dims=(0,))
    assert float(policy_distill_loss(a, b)) == pytest.approx(float(policy_distill_loss(b, a)))
    assert float(policy_distill_loss(a, b)) >= 0.0


def test_combined_loss_modes():
    assert combined_loss(3.0, 2.0, 4.0, DistillConfig(mode="none")) == 3.0
    total = combined_loss(3.0, 2.0, 4.0, DistillConfig(alpha1=0.01, alpha2=0.05, mode="all"))
    assert abs(total - 3.22) < 1e-12
    assert combined_loss(3.0, 2.0, 4.0, DistillConfig(alpha1=0.0, alpha2=0.0, mode="all")) == 3.0
    assert combined_loss(3.0, None, None, DistillConfig(mode="all")) == 3.0


def test_combined_loss_monotone_in_weights():
    for alpha1 in (0.0, 0.1, 0.5):
        lower = combined_loss(1.0, 2.0, 3.0, DistillConfig(alpha1=alpha1, alpha2=0.1, mode="all"))
        higher = combined_loss(1.0, 2.0, 3.0, DistillConfig(alpha1=alpha1 + 0.1, alpha2=0.1, mode="all"))
        assert higher >= lower


# ---------------------------------------------------------------------------
# teacher target extraction


@pytest.fixture
def target_setup(toy_ontology):
    vocab = Vocabulary(tokens=list(RESERVED_TOKENS) + ["i", "want", "food", "ok", "here"], max_size=40)
    config = ModelConfig(embed_dim=6, hidden_dim=10, vocab_size=len(vocab), max_decode_len=6, seed=2)
    teacher = TeacherModel(config, toy_ontology.belief_dim("restaurant"), "restaurant")
    turn = make_turn(
        "i want food",
        "ok here",
        domain="restaurant",
        belief={("restaurant", "food"): "italian"},
        db_count=3,
    )
    return teacher, turn, toy_ontology, vocab


def test_targets_full_mode_distributions(target_setup):
    teacher, turn, ontology, vocab = target_setup
    targets = teacher_targets(teacher, turn, ontology, vocab, "output_full")
    assert len(targets.probs) == len(turn.response_tokens) + 1
    for row in targets.probs:
        assert row.shape == (len(vocab),)
        assert abs(float(row.sum()) - 1.0) < 1e-6
    assert targets.action.shape == (10,)


def test_targets_topk_equals_full_when_k_is_vocab(target_setup):
    teacher, turn, ontology, vocab = target_setup
    full = teacher_targets(teacher, turn, ontology, vocab, "output_full")
    topk = teacher_targets(teacher, turn, ontology, vocab, "output_topk", k=len(vocab))
    for dense, ids, sparse in zip(full.probs, topk.support, topk.probs):
        assert torch.allclose(dense[ids], sparse, atol=1e-6)
        assert torch.allclose(dense[ids].sum(), torch.tensor(1.0), atol=1e-6)


def test_targets_top1_is_one_hot_argmax(target_setup):
    teacher, turn, ontology, vocab = target_setup
    full = teacher_targets(teacher, turn, ontology, vocab, "output_full")
    top1 = teacher_targets(teacher, turn, ontology, vocab, "output_topk", k=1)
    for dense, ids, sparse in zip(full.probs, top1.support, top1.probs):
        assert ids.tolist() == [int(dense.argmax())]
        assert sparse.tolist() == [1.0]


def test_targets_policy_mode_has_action_only(target_setup):
    teacher, turn, ontology, vocab = target_setup
    targets = teacher_targets(teacher, turn, ontology, vocab, "policy")
    assert targets.probs is None and targets.support is None
    assert torch.isfinite(targets.action).all()


def test_targets_domain_mismatch_rejected(target_setup):
    teacher, turn, ontology, vocab = target_setup
    turn.domain = "hotel"
    with pytest.raises(ValueError, match="routed"):
        teacher_targets(teacher, turn, ontology, vocab, "output_full")


def test_universal_teacher_accepts_any_domain(target_setup):
    _, turn, ontology, vocab = target_setup
    config = ModelConfig(embed_dim=6, hidden_dim=10, vocab_size=len(vocab), max_decode_len=6, seed=2)
    universal = TeacherModel(config, ontology.belief_dim(None), UNIVERSAL)
    targets = teacher_targets(universal, turn, ontology, vocab, "output_full")
    assert len(targets.probs) == len(turn.response_tokens) + 1
