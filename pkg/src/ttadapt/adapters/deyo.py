"""Entropy minimization gated by pseudo-label stability under a shape-destroying transform."""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..encoders import Batch, shape_destroying_transform
from ..errors import CompatibilityError
from .base import DEFAULT_LR, DEFAULT_MOMENTUM, GradientAdapter, entropy_budget

ENTROPY_FACTOR = 0.5   # keep e_i below this fraction of ln K
TAU_PLPD = 0.2         # minimum drop in pseudo-label probability under the transform
BLOCK_SIZE = 8


class DeyoAdapter(GradientAdapter):
    name = "deyo"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False, entropy_factor: float = ENTROPY_FACTOR,
                 tau_plpd: float = TAU_PLPD, block_size: int = BLOCK_SIZE, seed: int = 0):
        if not getattr(source, "supports_raw_inputs", False):
            raise CompatibilityError("deyo: requires raw-input access; frozen embedding tables are unsupported")
        super().__init__(source, head, lr=lr, momentum=momentum, full_params=full_params)
        self.entropy_margin = entropy_factor * entropy_budget(head.n_classes)
        self.tau_plpd = tau_plpd
        self.block_size = block_size
        self.seed = seed
        self._steps = 0

    def _reset_state(self) -> None:
        super()._reset_state()
        self._steps = 0

    def plpd(self, batch: Batch, probs: np.ndarray, preds: np.ndarray) -> np.ndarray:
        """Pseudo-label probability drop after block-permuting the raw inputs."""
        x = self.source.raw(batch)
        seed = int(np.random.SeedSequence([self.seed, 0xDE70, self._steps]).generate_state(1)[0])
        distorted = shape_destroying_transform(x, self.block_size, seed)
        alt = self.head.forward(self.source.embed_raw(distorted)).data
        rows = np.arange(preds.size)
        return probs[rows, preds] - alt[rows, preds]

    def compute_step(self, batch: Batch):
        probs_t, ent_t = self.forward_with_entropy(batch)
        probs = probs_t.data.copy()
        preds = self._predictions(probs)
        self._steps += 1

        plpd = self.plpd(batch, probs, preds)
        keep = np.flatnonzero((ent_t.data < self.entropy_margin) & (plpd > self.tau_plpd))
        if keep.size == 0:
            return probs, preds, None
        loss = nm.tmean(nm.take_rows(ent_t, keep))
        return probs, preds, nm.gradients(loss, self.params)
