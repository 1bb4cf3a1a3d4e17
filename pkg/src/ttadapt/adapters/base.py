"""Uniform online adaptation contract.

Every method consumes the current batch through ``adapt_and_predict`` and
returns (probability rows, predictions). Reported predictions always come
from the forward pass computed before that batch's parameter update is
applied; ``reset`` restores bit-identical source state. Gradient-based
methods split the step into ``compute_step`` (forward, selection, gradients)
and ``apply_step`` (optimizer plus any post-update machinery) so gradient
accumulation can interleave them sample by sample.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..classifier import ZeroShotHead
from ..encoders import Batch
from ..errors import CompatibilityError, TtadaptError
from ..numerics import SGD, Tensor

DEFAULT_LR = 1e-3
DEFAULT_MOMENTUM = 0.9


class Adapter:
    """Base: owns the vision source, the zero-shot head, and the source snapshot."""

    name = "base"

    def __init__(self, source, head: ZeroShotHead):
        self.source = source
        self.head = head
        source.set_eval()
        self._source_state = source.snapshot()

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def reset(self) -> None:
        self.source.restore(self._source_state)
        self._reset_state()

    def _reset_state(self) -> None:
        pass

    # -- shared forward helpers -------------------------------------------

    def _infer(self, batch: Batch) -> np.ndarray:
        probs = self.head.forward(self.source.embed(batch))
        return probs.data

    @staticmethod
    def _predictions(probs: np.ndarray) -> np.ndarray:
        return np.argmax(probs, axis=-1)


class GradientAdapter(Adapter):
    """Entropy-driven methods updating a parameter scope with momentum SGD.

    The default scope is the normalization affine parameters; encoders without
    them require full_params=True.
    """

    name = "gradient"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False):
        if not source.trainable:
            raise CompatibilityError(f"{self.name}: requires a trainable encoder")
        super().__init__(source, head)
        if full_params:
            self.params = source.parameters()
        else:
            self.params = source.norm_parameters()
            if not self.params:
                raise CompatibilityError(
                    f"{self.name}: encoder has no normalization parameters; "
                    "pass full_params=True to adapt the full parameter set"
                )
        self.lr = lr
        self.momentum = momentum
        self.optimizer = SGD(self.params, lr=lr, momentum=momentum)
        self._scope_source = [p.data.copy() for p in self.params]

    def forward_with_entropy(self, batch: Batch) -> tuple[Tensor, Tensor]:
        emb = self.source.embed(batch, with_grad=True)
        probs_t = self.head.forward(emb)
        return probs_t, nm.entropy(probs_t)

    def compute_step(self, batch: Batch):
        """Returns (probs, preds, grads-or-None); must not mutate parameters."""
        raise NotImplementedError

    def apply_step(self, grads) -> None:
        if grads is not None:
            self.optimizer.step(grads)

    def adapt_and_predict(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        probs, preds, grads = self.compute_step(batch)
        self.apply_step(grads)
        return probs, preds

    def _reset_state(self) -> None:
        self.optimizer = SGD(self.params, lr=self.lr, momentum=self.momentum)


def global_grad_norm(grads) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def entropy_budget(n_classes: int) -> float:
    """ln K, the maximum entropy over K classes."""
    if n_classes < 2:
        raise TtadaptError("entropy_budget: need at least two classes")
    return float(np.log(n_classes))
