"""Prompt banks and class prototypes in the shared embedding space.

A prompt bank holds one or more unit-norm text-side embeddings per class
(single template, hand-crafted ensemble, descriptive per-class lists, or a
merge of several banks). Collapsing a bank by per-class averaging and
re-normalizing yields the prototype set that the zero-shot head classifies
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .errors import FormatError, TtadaptError

TTAP_MAGIC = b"TTAP"
TTAP_VERSION = 1
UNIT_TOL_BANK = 1e-5
UNIT_TOL_PROTO = 1e-9


@dataclass
class PromptBank:
    """Per-class lists of unit-norm embedding vectors.

    embeddings[k] is a (J_k, D) array with J_k >= 1; D is shared across classes.
    """

    class_names: list[str]
    embeddings: list[np.ndarray]
    source_tag: str = "single"

    def __post_init__(self):
        if not self.class_names:
            raise TtadaptError("PromptBank: class list is empty")
        if len(self.class_names) != len(self.embeddings):
            raise TtadaptError("PromptBank: class names and embedding lists disagree")
        self.embeddings = [np.asarray(e, dtype=np.float64) for e in self.embeddings]
        dim = self.embeddings[0].shape[-1] if self.embeddings[0].ndim == 2 else None
        for name, emb in zip(self.class_names, self.embeddings):
            if emb.ndim != 2 or emb.shape[0] < 1:
                raise TtadaptError(f"PromptBank: class {name!r} needs at least one prompt vector")
            if emb.shape[1] != dim:
                raise TtadaptError(f"PromptBank: class {name!r} has dim {emb.shape[1]}, expected {dim}")
            norms = np.linalg.norm(emb, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL_BANK):
                raise TtadaptError(f"PromptBank: class {name!r} has non-unit prompt vectors")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.embeddings[0].shape[1]

    def prompt_counts(self) -> list[int]:
        return [e.shape[0] for e in self.embeddings]


@dataclass
class PrototypeSet:
    """One unit-norm prototype vector per class; the zero-shot classifier's weights."""

    prototypes: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise TtadaptError("PrototypeSet: need a (K, D) array with K >= 2")
        norms = np.linalg.norm(self.prototypes, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL_PROTO):
            raise TtadaptError("PrototypeSet: prototypes must be unit norm")
        if self.class_names and len(self.class_names) != self.prototypes.shape[0]:
            raise TtadaptError("PrototypeSet: class name count mismatch")

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def mean_prototype(bank: PromptBank) -> PrototypeSet:
    """Average each class's prompt embeddings, then re-normalize to unit norm."""
    protos = np.stack([e.mean(axis=0) for e in bank.embeddings])
    norms = np.linalg.norm(protos, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise TtadaptError("mean_prototype: a class average collapsed to the zero vector")
    return PrototypeSet(protos / norms, list(bank.class_names))


def merge_banks(a: PromptBank, b: PromptBank) -> PromptBank:
    """Concatenate two banks class by class into an all-prompts bank."""
    if a.class_names != b.class_names:
        offending = sorted(set(a.class_names).symmetric_difference(b.class_names)) or ["<order differs>"]
        raise TtadaptError(f"merge_banks: class names disagree: {offending}")
    if a.dim != b.dim:
        raise TtadaptError(f"merge_banks: dims disagree ({a.dim} vs {b.dim})")
    merged = [np.concatenate([ea, eb], axis=0) for ea, eb in zip(a.embeddings, b.embeddings)]
    return PromptBank(list(a.class_names), merged, source_tag="all")


def save_prompt_bank(bank: PromptBank, path) -> None:
    w = Writer()
    w.raw(TTAP_MAGIC)
    w.u32(TTAP_VERSION)
    w.u32(bank.n_classes)
    w.u32(bank.dim)
    for name, emb in zip(bank.class_names, bank.embeddings):
        w.string(name)
        w.u32(emb.shape[0])
        w.f32_array(emb)
    Path(path).write_bytes(w.blob())


def load_prompt_bank(path) -> PromptBank:
    """Read a TTAP file; prompt vectors are re-normalized to absorb f32 quantization."""
    r = Reader(Path(path).read_bytes(), path)
    r.magic(TTAP_MAGIC)
    version = r.u32("version")
    if version != TTAP_VERSION:
        raise FormatError(path, r.pos - 4, f"unsupported version {version}")
    n_classes = r.u32("class count")
    dim = r.u32("dim")
    names, embeddings = [], []
    for k in range(n_classes):
        names.append(r.string(f"class {k} name"))
        j = r.u32(f"class {k} prompt count")
        vecs = r.f32_array(j * dim, f"class {k} vectors").reshape(j, dim)
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if np.any(norms <= 1e-12):
            raise FormatError(path, r.pos, f"class {k} contains a zero prompt vector")
        embeddings.append(vecs / norms)
    r.done()
    return PromptBank(names, embeddings, source_tag="file")
