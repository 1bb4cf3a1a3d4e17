"""Writers for the engine's binary interchange formats (little-endian).

TTAP: magic "TTAP", u32 version=1, u32 K, u32 D, then per class
u32 name length + UTF-8 name, u32 J_k, J_k * D f32 vectors.

TTAE: magic "TTAE", u32 version=1, u32 S, u32 V, u32 D, u32 K,
u32 n_domains, class-name table, domain-name table, i32 labels[S],
i32 domain_ids[S], f32 data[S*V*D] (sample-major, then view).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_ttap(path, class_names: list[str], embeddings: list[np.ndarray]) -> None:
    """One record per class; vectors are written as 32-bit floats."""
    if len(class_names) != len(embeddings) or not class_names:
        raise ValueError("write_ttap: need one embedding block per class")
    dim = embeddings[0].shape[1]
    parts = [b"TTAP", struct.pack("<III", 1, len(class_names), dim)]
    for name, block in zip(class_names, embeddings):
        if block.ndim != 2 or block.shape[0] < 1 or block.shape[1] != dim:
            raise ValueError(f"write_ttap: bad block shape {block.shape} for class {name!r}")
        parts.append(_string(name))
        parts.append(struct.pack("<I", block.shape[0]))
        parts.append(np.ascontiguousarray(block, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def write_ttae(path, data: np.ndarray, labels: np.ndarray, domain_ids: np.ndarray,
               class_names: list[str], domain_names: list[str]) -> None:
    """data is (S, V, D); labels/domain_ids are per-sample int arrays."""
    if data.ndim != 3:
        raise ValueError("write_ttae: data must be (S, V, D)")
    s, v, d = data.shape
    if labels.shape != (s,) or domain_ids.shape != (s,):
        raise ValueError("write_ttae: labels/domain_ids must match the sample count")
    parts = [b"TTAE", struct.pack("<IIIIII", 1, s, v, d, len(class_names), len(domain_names))]
    parts += [_string(n) for n in class_names]
    parts += [_string(n) for n in domain_names]
    parts.append(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(domain_ids, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))
