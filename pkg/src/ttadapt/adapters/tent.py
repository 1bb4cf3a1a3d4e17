"""Entropy minimization over the normalization affine parameters."""

from __future__ import annotations

from .. import numerics as nm
from ..encoders import Batch
from .base import GradientAdapter


class TentAdapter(GradientAdapter):
    name = "tent"

    def compute_step(self, batch: Batch):
        probs_t, ent_t = self.forward_with_entropy(batch)
        probs = probs_t.data.copy()
        grads = nm.gradients(nm.tmean(ent_t), self.params)
        return probs, self._predictions(probs), grads
