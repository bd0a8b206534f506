import json
import struct

import pytest
import torch

from dialdistill.checkpoint import CheckpointError, MAGIC, load_checkpoint, save_checkpoint
from dialdistill.corpus import RESERVED_TOKENS, UNIVERSAL, Vocabulary
from dialdistill.model import ModelConfig, StudentModel, TeacherModel


@pytest.fixture
def vocab():
    return Vocabulary(tokens=list(RESERVED_TOKENS) + [f"w{i}" for i in range(16)], max_size=400)


def _config(vocab):
    return ModelConfig(embed_dim=8, hidden_dim=12, vocab_size=len(vocab), max_decode_len=8, seed=5)


def test_student_round_trip_bit_exact(tmp_path, vocab, toy_ontology):
    model = StudentModel(_config(vocab))
    path = tmp_path / "student.ckpt"
    save_checkpoint(path, model, "student", vocab, toy_ontology)
    loaded = load_checkpoint(path)
    assert loaded.kind == "student"
    assert loaded.vocab.tokens == vocab.tokens
    assert loaded.ontology.to_dict() == toy_ontology.to_dict()
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.model.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)


def test_save_load_save_identical_bytes(tmp_path, vocab, toy_ontology):
    model = TeacherModel(_config(vocab), toy_ontology.belief_dim("restaurant"), "restaurant")
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(first, model, "teacher", vocab, toy_ontology, domain="restaurant")
    loaded = load_checkpoint(first)
    save_checkpoint(second, loaded.model, "teacher", loaded.vocab, loaded.ontology, domain=loaded.domain)
    assert first.read_bytes() == second.read_bytes()


def test_universal_teacher_round_trip(tmp_path, vocab, toy_ontology):
    model = TeacherModel(_config(vocab), toy_ontology.belief_dim(None), UNIVERSAL)
    path = tmp_path / "teacher_universal.ckpt"
    save_checkpoint(path, model, "teacher", vocab, toy_ontology, domain=UNIVERSAL)
    loaded = load_checkpoint(path)
    assert loaded.model.belief_dim == toy_ontology.belief_dim(None)
    assert loaded.domain == UNIVERSAL


def test_version_mismatch_names_expected_version(tmp_path, vocab, toy_ontology):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, StudentModel(_config(vocab)), "student", vocab, toy_ontology)
    blob = path.read_bytes()
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len])
    header["format_version"] = 99
    raw = json.dumps(header, separators=(",", ":")).encode()
    path.write_bytes(blob[:8] + struct.pack("<Q", len(raw)) + raw + blob[16 + header_len :])
    with pytest.raises(CheckpointError, match="expected 1"):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_data_rejected(tmp_path, vocab, toy_ontology):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, StudentModel(_config(vocab)), "student", vocab, toy_ontology)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 64])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_float64_load(tmp_path, vocab, toy_ontology):
    model = StudentModel(_config(vocab))
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, model, "student", vocab, toy_ontology)
    loaded = load_checkpoint(path, dtype=torch.float64)
    for pa, pb in zip(model.parameters(), loaded.model.parameters()):
        assert pb.dtype == torch.float64
        assert torch.equal(pa.double(), pb)


def test_magic_constant_stable(tmp_path, vocab, toy_ontology):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, StudentModel(_config(vocab)), "student", vocab, toy_ontology)
    assert path.read_bytes()[:8] == MAGIC
