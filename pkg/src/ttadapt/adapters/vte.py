"""Optimization-free vision-space ensembling of confident augmented views.

Each sample's views are embedded, the lowest-entropy fraction is kept, and
their mean embedding is classified against the (text-side ensembled)
prototypes. No parameters change and no gradients are needed.
"""

from __future__ import annotations

import numpy as np

from ..classifier import FilterRule, confidence_filter, entropy_rows, predict, probabilities, similarities
from ..encoders import Batch, view_seed
from ..errors import TtadaptError
from .base import Adapter

N_VIEWS = 64
SELECT_FRACTION = 0.1


class VteAdapter(Adapter):
    name = "vte"

    def __init__(self, source, head, n_views: int = N_VIEWS,
                 select_fraction: float = SELECT_FRACTION, minimum_kept: int = 1, seed: int = 0):
        super().__init__(source, head)
        if n_views < minimum_kept:
            raise TtadaptError(f"vte: n_views ({n_views}) must be >= minimum_kept ({minimum_kept})")
        self.n_views = n_views
        self.rule = FilterRule("top_fraction", select_fraction, minimum_kept)
        self.seed = seed

    def _view_seed(self, index: int) -> int:
        return view_seed(self.seed, index)

    def ensemble_embedding(self, index: int) -> np.ndarray:
        """Mean of the selected views' embeddings for one sample."""
        views = self.source.sample_views(index, self.n_views, self._view_seed(index)).data
        probs = probabilities(similarities(views, self.head), self.head)
        selected = confidence_filter(entropy_rows(probs), self.rule)
        return views[selected].mean(axis=0)

    def _predict_sample(self, index: int) -> np.ndarray:
        z_bar = self.ensemble_embedding(index)
        return probabilities(similarities(z_bar[None, :], self.head), self.head)[0]

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        probs = np.stack([self._predict_sample(int(i)) for i in batch.indices])
        return probs, predict(probs)
