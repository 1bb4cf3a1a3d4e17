"""Gradient accumulation: sample-by-sample prediction, update every b samples.

Recovers batch-style updates for encoders whose per-sample forwards are
independent (no batch norm) while holding only a running gradient sum, so
memory does not grow with the accumulation window.
"""

from __future__ import annotations

import numpy as np

from ..encoders import Batch
from ..errors import CompatibilityError, TtadaptError
from .base import Adapter, GradientAdapter


class GradientAccumulator(Adapter):
    name = "accumulate"

    def __init__(self, inner: GradientAdapter, every: int):
        if not isinstance(inner, GradientAdapter):
            raise CompatibilityError("accumulate: inner adapter must be gradient-based")
        if getattr(inner.source, "has_batch_norm", False):
            raise CompatibilityError("accumulate: batch-norm encoders break per-sample equivalence")
        if every < 1:
            raise TtadaptError("accumulate: window must be >= 1")
        self.inner = inner
        self.every = every
        self._sum = None
        self._contributing = 0
        self._seen = 0

    @property
    def source(self):
        return self.inner.source

    @property
    def head(self):
        return self.inner.head

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        rows = []
        for i in range(batch.size):
            single = Batch(batch.indices[i : i + 1], batch.domain)
            probs, _, grads = self.inner.compute_step(single)
            rows.append(probs[0])
            if grads is not None:
                if self._sum is None:
                    self._sum = [g.copy() for g in grads]
                else:
                    for s, g in zip(self._sum, grads):
                        s += g
                self._contributing += 1
            self._seen += 1
            if self._seen >= self.every:
                if self._contributing > 0:
                    self.inner.apply_step([s / self._contributing for s in self._sum])
                else:
                    self.inner.apply_step(None)
                self._sum, self._contributing, self._seen = None, 0, 0
        probs = np.stack(rows)
        return probs, np.argmax(probs, axis=-1)

    def reset(self) -> None:
        self.inner.reset()
        self._sum, self._contributing, self._seen = None, 0, 0
