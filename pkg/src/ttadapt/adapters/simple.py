"""Stateless zero-shot inference and batch-statistics refresh."""

from __future__ import annotations

import numpy as np

from ..encoders import Batch, bn_recalculate
from ..errors import CompatibilityError
from .base import Adapter


class SourceAdapter(Adapter):
    """Frozen zero-shot model; the baseline every method is scored against."""

    name = "source"

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        probs = self._infer(batch)
        return probs, self._predictions(probs)


class Bn1Adapter(Adapter):
    """Replace batch-norm running statistics with the current batch's, then predict."""

    name = "bn1"

    def __init__(self, source, head):
        if not getattr(source, "has_batch_norm", False) or not source.supports_raw_inputs:
            raise CompatibilityError("bn1: requires a raw-input encoder with batch norm")
        super().__init__(source, head)

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        bn_recalculate(self.source.encoder, self.source.raw(batch))
        probs = self._infer(batch)
        return probs, self._predictions(probs)
