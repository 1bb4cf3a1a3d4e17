"""Sharpness-aware reliable entropy minimization with a collapse-recovery reset."""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..encoders import Batch
from .base import DEFAULT_LR, DEFAULT_MOMENTUM, GradientAdapter, entropy_budget, global_grad_norm

E0_FACTOR = 0.4
RHO_SAM = 0.05
RESET_THRESHOLD = 0.2
LOSS_EMA_MOMENTUM = 0.9


def sam_gradient(loss_and_grads, params, rho: float):
    """Ascend rho along the normalized gradient, re-evaluate the gradient there, restore.

    loss_and_grads rebuilds the loss at the current parameter values and
    returns (loss_value, gradient list). A zero gradient skips the ascent.
    """
    loss, grads = loss_and_grads()
    norm = global_grad_norm(grads)
    if norm == 0.0:
        return loss, grads
    saved = [p.data.copy() for p in params]
    for p, g in zip(params, grads):
        p.data = p.data + rho * g / norm
    try:
        _, grads = loss_and_grads()
    finally:
        for p, s in zip(params, saved):
            p.data = s
    return loss, grads


class SarAdapter(GradientAdapter):
    name = "sar"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False, rho_sam: float = RHO_SAM,
                 e0_factor: float = E0_FACTOR, reset_threshold: float = RESET_THRESHOLD):
        super().__init__(source, head, lr=lr, momentum=momentum, full_params=full_params)
        self.rho_sam = rho_sam
        self.e_margin = e0_factor * entropy_budget(head.n_classes)
        self.reset_threshold = reset_threshold
        self.loss_ema: float | None = None
        self._recover = False

    def _reset_state(self) -> None:
        super()._reset_state()
        self.loss_ema = None
        self._recover = False

    def compute_step(self, batch: Batch):
        probs_t, ent_t = self.forward_with_entropy(batch)
        probs = probs_t.data.copy()
        preds = self._predictions(probs)
        keep = np.flatnonzero(ent_t.data < self.e_margin)
        if keep.size == 0:
            return probs, preds, None

        def loss_and_grads():
            _, ent = self.forward_with_entropy(batch)
            loss = nm.tmean(nm.take_rows(ent, keep))
            return float(loss.data), nm.gradients(loss, self.params)

        loss_value, grads = sam_gradient(loss_and_grads, self.params, self.rho_sam)
        if self.loss_ema is None:
            self.loss_ema = loss_value
        else:
            self.loss_ema = LOSS_EMA_MOMENTUM * self.loss_ema + (1 - LOSS_EMA_MOMENTUM) * loss_value
        self._recover = self.loss_ema < self.reset_threshold
        return probs, preds, grads

    def apply_step(self, grads) -> None:
        super().apply_step(grads)
        if self._recover:
            self.reset()
