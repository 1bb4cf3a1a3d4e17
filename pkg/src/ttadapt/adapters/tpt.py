"""Episodic prompt-context tuning on augmented views of a single sample.

For each test sample, a shared context vector added to every class prototype
(then re-normalized) is optimized to minimize the mean entropy of the most
confident augmented views; the canonical view is classified with the tuned
prototypes and the context resets before the next sample.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..classifier import FilterRule, confidence_filter
from ..encoders import Batch, view_seed
from ..errors import TtadaptError
from ..numerics import SGD, Tensor
from .base import Adapter

N_VIEWS = 64
SELECT_FRACTION = 0.1
TPT_LR = 5e-3
TPT_STEPS = 1


class TptAdapter(Adapter):
    name = "tpt"

    def __init__(self, source, head, n_views: int = N_VIEWS, lr: float = TPT_LR,
                 n_steps: int = TPT_STEPS, select_fraction: float = SELECT_FRACTION,
                 minimum_kept: int = 1, seed: int = 0):
        super().__init__(source, head)
        if n_views < minimum_kept:
            raise TtadaptError(f"tpt: n_views ({n_views}) must be >= minimum_kept ({minimum_kept})")
        self.n_views = n_views
        self.lr = lr
        self.n_steps = n_steps
        self.rule = FilterRule("top_fraction", select_fraction, minimum_kept)
        self.seed = seed
        # diagnostics from the most recent sample: filtered view entropy at
        # context zero and after the last optimization step
        self.last_entropy_before = float("nan")
        self.last_entropy_after = float("nan")

    def _view_seed(self, index: int) -> int:
        return view_seed(self.seed, index)

    def _predict_sample(self, index: int) -> np.ndarray:
        views = self.source.sample_views(index, self.n_views, self._view_seed(index))
        views_n = nm.l2_normalize(views)
        protos = Tensor(self.head.prototypes.prototypes)

        base_probs = nm.softmax(
            nm.scalar_mul(nm.matmul(views_n, nm.transpose(protos)), self.head.inv_temperature)
        )
        selected = confidence_filter(nm.entropy(base_probs).data, self.rule)

        context = Tensor(np.zeros(self.head.prototypes.dim), requires_grad=True)
        opt = SGD([context], lr=self.lr, momentum=0.0)

        def filtered_loss():
            tuned = nm.l2_normalize(nm.add(protos, context))
            probs = nm.softmax(
                nm.scalar_mul(nm.matmul(views_n, nm.transpose(tuned)), self.head.inv_temperature)
            )
            return nm.tmean(nm.take_rows(nm.entropy(probs), selected))

        self.last_entropy_before = float(filtered_loss().data)
        for _ in range(self.n_steps):
            opt.step(nm.gradients(filtered_loss(), [context]))
        self.last_entropy_after = float(filtered_loss().data)

        tuned = self.head.prototypes.prototypes + context.data
        tuned /= np.linalg.norm(tuned, axis=1, keepdims=True)
        canonical = views.data[0]
        canonical = canonical / np.linalg.norm(canonical)
        sims = canonical @ tuned.T
        probs = nm.softmax(nm.scalar_mul(Tensor(sims[None, :]), self.head.inv_temperature)).data
        return probs[0]

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        probs = np.stack([self._predict_sample(int(i)) for i in batch.indices])
        return probs, self._predictions(probs)
