"""Efficient entropy minimization with reliability and diversity sample filtering."""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..encoders import Batch
from ..numerics import Tensor
from .base import DEFAULT_LR, DEFAULT_MOMENTUM, GradientAdapter, entropy_budget

E0_FACTOR = 0.4          # reliability margin as a fraction of ln K
DIVERSITY_DELTA = 0.4    # drop samples too similar to the running output direction
DIVERSITY_MOMENTUM = 0.9


class EtaAdapter(GradientAdapter):
    name = "eta"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False, e0_factor: float = E0_FACTOR,
                 diversity_delta: float = DIVERSITY_DELTA):
        super().__init__(source, head, lr=lr, momentum=momentum, full_params=full_params)
        self.e_margin = e0_factor * entropy_budget(head.n_classes)
        self.diversity_delta = diversity_delta
        self.prob_ema: np.ndarray | None = None

    def _reset_state(self) -> None:
        super()._reset_state()
        self.prob_ema = None

    def compute_step(self, batch: Batch):
        probs_t, ent_t = self.forward_with_entropy(batch)
        probs = probs_t.data.copy()
        preds = self._predictions(probs)
        ent = ent_t.data

        keep = np.flatnonzero(ent < self.e_margin)
        if keep.size and self.prob_ema is not None:
            p = probs[keep]
            cos = p @ self.prob_ema / (
                np.linalg.norm(p, axis=1) * np.linalg.norm(self.prob_ema) + 1e-12
            )
            keep = keep[cos <= self.diversity_delta]
        if keep.size == 0:
            return probs, preds, None

        weights = np.exp(self.e_margin - ent[keep])
        loss = nm.scalar_mul(
            nm.tsum(nm.mul(nm.take_rows(ent_t, keep), Tensor(weights))), 1.0 / weights.sum()
        )
        grads = nm.gradients(loss, self.params)

        accepted_mean = probs[keep].mean(axis=0)
        if self.prob_ema is None:
            self.prob_ema = accepted_mean
        else:
            self.prob_ema = DIVERSITY_MOMENTUM * self.prob_ema + (1 - DIVERSITY_MOMENTUM) * accepted_mean
        return probs, preds, grads
