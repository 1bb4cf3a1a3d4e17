"""Zero-shot classification head: cosine similarities as logits.

Image embeddings are matched against unit-norm class prototypes; the cosine
similarities, scaled by an inverse temperature, feed a row-wise softmax. The
entropy-based confidence filter shared by the view-ensembling and
sample-filtering adaptation methods also lives here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import TtadaptError
from .numerics import Tensor
from .prototypes import PrototypeSet

DEFAULT_INV_TEMPERATURE = 100.0  # standard logit scale for contrastively trained encoders


@dataclass
class ZeroShotHead:
    prototypes: PrototypeSet
    inv_temperature: float = DEFAULT_INV_TEMPERATURE

    def __post_init__(self):
        if self.inv_temperature <= 0:
            raise TtadaptError(f"inv_temperature must be > 0, got {self.inv_temperature}")

    @property
    def n_classes(self) -> int:
        return self.prototypes.n_classes

    def forward(self, emb: Tensor, prototypes: Tensor | None = None) -> Tensor:
        """Differentiable path: embeddings (B, D) -> probability rows (B, K)."""
        protos = prototypes if prototypes is not None else Tensor(self.prototypes.prototypes)
        sims = nm.matmul(nm.l2_normalize(emb), nm.transpose(protos))
        return nm.softmax(nm.scalar_mul(sims, self.inv_temperature))


@dataclass
class FilterRule:
    """Entropy-based sample selection: keep a fraction or apply a threshold.

    mode "top_fraction" keeps the floor(value * B) lowest-entropy samples;
    mode "threshold" keeps samples with entropy <= value. Both keep at least
    minimum_kept samples whenever the batch is that large.
    """

    mode: str = "top_fraction"
    value: float = 0.1
    minimum_kept: int = 1

    def __post_init__(self):
        if self.mode not in ("top_fraction", "threshold"):
            raise TtadaptError(f"FilterRule: unknown mode {self.mode!r}")
        if self.mode == "top_fraction" and not 0.0 < self.value <= 1.0:
            raise TtadaptError(f"FilterRule: fraction must lie in (0, 1], got {self.value}")
        if self.mode == "threshold" and self.value < 0.0:
            raise TtadaptError(f"FilterRule: threshold must be >= 0, got {self.value}")
        if self.minimum_kept < 1:
            raise TtadaptError("FilterRule: minimum_kept must be positive")


def similarities(z: np.ndarray, head: ZeroShotHead) -> np.ndarray:
    """Cosine similarity of every embedding row against every prototype."""
    z = np.asarray(z, dtype=np.float64)
    sims = nm.matmul(nm.l2_normalize(Tensor(z)), Tensor(head.prototypes.prototypes.T))
    return sims.data


def probabilities(sims: np.ndarray, head: ZeroShotHead) -> np.ndarray:
    """Temperature softmax over similarity rows."""
    return nm.softmax(nm.scalar_mul(Tensor(sims), head.inv_temperature)).data


def predict(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def confidence_filter(entropies: np.ndarray, rule: FilterRule) -> np.ndarray:
    """Indices of the selected samples, ascending; ties broken by index."""
    e = np.asarray(entropies, dtype=np.float64)
    if e.ndim != 1 or e.size < 1:
        raise TtadaptError("confidence_filter: need a non-empty 1-D entropy array")
    n = e.size
    floor = min(rule.minimum_kept, n)
    if rule.mode == "top_fraction":
        k = max(int(rule.value * n), floor)
        order = np.argsort(e, kind="stable")
        return np.sort(order[:k])
    kept = np.flatnonzero(e <= rule.value)
    if kept.size < floor:
        order = np.argsort(e, kind="stable")
        kept = np.sort(order[:floor])
    return kept


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Convenience numpy wrapper around the differentiable entropy."""
    return nm.entropy(Tensor(probs)).data
