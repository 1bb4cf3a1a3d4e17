"""Certainty/diversity-weighted entropy minimization with weight ensembling.

The loss weights collapse to zero when all output rows agree, which is
exactly the guard against trivial solutions; a convex pull toward the source
parameters after every optimizer step bounds the adapted trajectory. On
correlated streams the reported probabilities pass through a running
label-prior correction in the output probability space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nm
from ..classifier import entropy_rows
from ..encoders import Batch
from ..errors import TtadaptError
from ..numerics import Tensor
from .base import DEFAULT_LR, DEFAULT_MOMENTUM, GradientAdapter, entropy_budget, global_grad_norm

LAMBDA_SRC = 0.01
PRIOR_MOMENTUM = 0.9
WEIGHT_EPS = 1e-12


def certainty_diversity_weights(probs: np.ndarray) -> np.ndarray:
    """Per-sample loss weights: certain and batch-atypical rows count more.

    w_cert = 1 - e/ln K, w_div = 1 - cos(p, batch mean); the product is
    renormalized to sum to the batch size. All-identical rows give all-zero
    weights; callers skip the update in that case.
    """
    probs = np.asarray(probs, dtype=np.float64)
    b, k = probs.shape
    w_cert = 1.0 - entropy_rows(probs) / entropy_budget(k)
    p_bar = probs.mean(axis=0)
    cos = probs @ p_bar / (np.linalg.norm(probs, axis=1) * np.linalg.norm(p_bar))
    w_div = 1.0 - cos
    w_div[w_div < WEIGHT_EPS] = 0.0  # rows identical to the batch mean carry no signal
    w = np.maximum(w_cert, 0.0) * np.maximum(w_div, 0.0)
    total = w.sum()
    if total <= WEIGHT_EPS:
        return np.zeros(b)
    return w * (b / total)


def weight_ensemble(params, source_arrays, lambda_src: float) -> None:
    """In-place convex combination pulling each parameter toward its source value."""
    if len(params) != len(source_arrays):
        raise TtadaptError("weight_ensemble: parameter/source set mismatch")
    if not 0.0 <= lambda_src <= 1.0:
        raise TtadaptError(f"weight_ensemble: lambda_src must lie in [0, 1], got {lambda_src}")
    for p, src in zip(params, source_arrays):
        if p.data.shape != src.shape:
            raise TtadaptError("weight_ensemble: parameter shape mismatch")
        p.data = lambda_src * src + (1.0 - lambda_src) * p.data


@dataclass
class PriorState:
    """Running mean of corrected output probabilities, EMA with momentum."""

    p_bar: np.ndarray
    momentum: float = PRIOR_MOMENTUM

    @classmethod
    def uniform(cls, n_classes: int, momentum: float = PRIOR_MOMENTUM) -> "PriorState":
        return cls(np.full(n_classes, 1.0 / n_classes), momentum)


def prior_correction(probs: np.ndarray, prior: PriorState) -> np.ndarray:
    """Divide each row by the smoothed running prior and renormalize, then update the prior."""
    k = probs.shape[1]
    q = probs / (prior.p_bar + 1.0 / k)
    q /= q.sum(axis=1, keepdims=True)
    prior.p_bar = prior.momentum * prior.p_bar + (1.0 - prior.momentum) * q.mean(axis=0)
    return q


class RoidAdapter(GradientAdapter):
    name = "roid"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False, lambda_src: float = LAMBDA_SRC,
                 use_prior_correction: bool = False, prior_momentum: float = PRIOR_MOMENTUM):
        super().__init__(source, head, lr=lr, momentum=momentum, full_params=full_params)
        self.lambda_src = lambda_src
        self.use_prior_correction = use_prior_correction
        self.prior_momentum = prior_momentum
        self.prior = PriorState.uniform(head.n_classes, prior_momentum)
        self.last_update_norm = 0.0

    def _reset_state(self) -> None:
        super()._reset_state()
        self.prior = PriorState.uniform(self.head.n_classes, self.prior_momentum)
        self.last_update_norm = 0.0

    def compute_step(self, batch: Batch):
        probs_t, ent_t = self.forward_with_entropy(batch)
        probs = probs_t.data.copy()
        weights = certainty_diversity_weights(probs)
        grads = None
        if weights.sum() > 0.0:
            loss = nm.scalar_mul(nm.tsum(nm.mul(ent_t, Tensor(weights))), 1.0 / batch.size)
            grads = nm.gradients(loss, self.params)
        reported = prior_correction(probs, self.prior) if self.use_prior_correction else probs
        return reported, self._predictions(reported), grads

    def apply_step(self, grads) -> None:
        before = [p.data.copy() for p in self.params]
        super().apply_step(grads)
        self.last_update_norm = global_grad_norm(
            [p.data - b for p, b in zip(self.params, before)]
        )
        weight_ensemble(self.params, self._scope_source, self.lambda_src)

    def distance_to_source(self) -> float:
        return global_grad_norm([p.data - s for p, s in zip(self.params, self._scope_source)])
