"""Single-file model checkpoints.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON header
(model config, vocabulary, ontology in layout order, parameter manifest), and
the raw little-endian float32 parameter data concatenated in manifest order.
Writing is fully deterministic, so save(load(x)) reproduces x byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import UNIVERSAL, Ontology, Vocabulary
from .model import ModelConfig, StudentModel, TeacherModel

MAGIC = b"DLGDSTL1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated, or version-mismatched checkpoints."""


@dataclass
class Checkpoint:
    kind: str  # "student" | "teacher"
    domain: str | None
    config: ModelConfig
    vocab: Vocabulary
    ontology: Ontology
    model: torch.nn.Module


def _param_bytes(tensor):
    array = tensor.detach().cpu().contiguous().to(torch.float32).numpy()
    return array.astype("<f4", copy=False).tobytes()


def save_checkpoint(path, model, kind, vocab, ontology, domain=None):
    """Serialize a model with its vocabulary and ontology layout."""
    if kind not in ("student", "teacher"):
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    names = [name for name, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "domain": domain,
        "model_config": model.config.to_dict(),
        "vocabulary": vocab.to_dict(),
        "ontology": ontology.to_dict(),  # key order is the belief layout
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(_param_bytes(params[name]))


def load_checkpoint(path, dtype=torch.float32):
    """Reconstruct the model described by a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")

    config = ModelConfig.from_dict(header["model_config"])
    vocab = Vocabulary.from_dict(header["vocabulary"])
    ontology = Ontology.from_dict(header["ontology"])
    kind = header["kind"]
    domain = header.get("domain")
    if kind == "student":
        model = StudentModel(config, dtype=dtype)
    elif kind == "teacher":
        scope = None if domain == UNIVERSAL else domain
        model = TeacherModel(config, ontology.belief_dim(scope), domain, dtype=dtype)
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")

    params = dict(model.named_parameters())
    offset = 16 + header_len
    with torch.no_grad():
        for spec in header["params"]:
            name, shape = spec["name"], tuple(spec["shape"])
            if name not in params:
                raise CheckpointError(f"{path}: unexpected parameter {name!r}")
            param = params[name]
            if tuple(param.shape) != shape:
                raise CheckpointError(f"{path}: parameter {name!r} has shape {shape}, expected {tuple(param.shape)}")
            numel = int(np.prod(shape)) if shape else 1
            end = offset + 4 * numel
            if end > len(blob):
                raise CheckpointError(f"{path}: truncated parameter data for {name!r}")
            array = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
            param.copy_(torch.from_numpy(array.copy()).to(dtype))
            offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter data")
    return Checkpoint(kind=kind, domain=domain, config=config, vocab=vocab, ontology=ontology, model=model)
