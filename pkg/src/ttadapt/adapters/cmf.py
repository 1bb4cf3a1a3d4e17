"""Continual momentum filtering: Kalman-smoothed parameter updates.

Each batch runs a certainty/diversity-weighted entropy step (no weight
ensembling) whose post-step parameters act as the observation; a scalar-gain
Kalman filter blends the observation into the filtered parameters, which are
what inference and the next inner step continue from. With the variance at
its fixed point the gain is constant and the filter reduces exactly to an
exponential moving average.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..encoders import Batch
from ..errors import TtadaptError
from ..numerics import Tensor
from .base import DEFAULT_LR, DEFAULT_MOMENTUM, GradientAdapter
from .roid import PRIOR_MOMENTUM, PriorState, certainty_diversity_weights, prior_correction

PROCESS_NOISE = 1e-5    # Q
OBSERVATION_NOISE = 1e-2  # R


class KalmanState:
    """Scalar-variance Kalman recurrence shared across all filtered parameters.

    Per step: P <- P + Q; gain = P / (P + R); P <- (1 - gain) P. With shared
    Q, R, and initial P the per-parameter variances coincide, so one scalar
    carries them all.
    """

    def __init__(self, process_noise: float = PROCESS_NOISE,
                 observation_noise: float = OBSERVATION_NOISE, p0: float | None = None):
        if process_noise < 0 or observation_noise <= 0:
            raise TtadaptError("KalmanState: need Q >= 0 and R > 0")
        self.q = float(process_noise)
        self.r = float(observation_noise)
        self.p0 = float(observation_noise if p0 is None else p0)
        if self.p0 < 0:
            raise TtadaptError("KalmanState: initial variance must be >= 0")
        self.p = self.p0

    def step_gain(self) -> float:
        self.p += self.q
        gain = self.p / (self.p + self.r)
        self.p *= 1.0 - gain
        return gain

    def reset(self) -> None:
        self.p = self.p0

    @staticmethod
    def fixed_point_gain(q: float, r: float) -> float:
        """Positive root of gain^2 * R = (1 - gain) * Q, the recurrence's limit."""
        return (-q + np.sqrt(q * q + 4.0 * r * q)) / (2.0 * r)

    @classmethod
    def at_fixed_point(cls, q: float = PROCESS_NOISE, r: float = OBSERVATION_NOISE) -> "KalmanState":
        gain = cls.fixed_point_gain(q, r)
        return cls(q, r, p0=gain * r)


class CmfAdapter(GradientAdapter):
    name = "cmf"

    def __init__(self, source, head, lr: float = DEFAULT_LR, momentum: float = DEFAULT_MOMENTUM,
                 full_params: bool = False, process_noise: float = PROCESS_NOISE,
                 observation_noise: float = OBSERVATION_NOISE, p0: float | None = None,
                 use_prior_correction: bool = False, prior_momentum: float = PRIOR_MOMENTUM):
        super().__init__(source, head, lr=lr, momentum=momentum, full_params=full_params)
        self.kalman = KalmanState(process_noise, observation_noise, p0)
        self.theta_hat = [p.data.copy() for p in self.params]
        self.use_prior_correction = use_prior_correction
        self.prior_momentum = prior_momentum
        self.prior = PriorState.uniform(head.n_classes, prior_momentum)
        self.gain_trace: list[float] = []

    def _reset_state(self) -> None:
        super()._reset_state()
        self.kalman.reset()
        self.theta_hat = [p.data.copy() for p in self.params]
        self.prior = PriorState.uniform(self.head.n_classes, self.prior_momentum)
        self.gain_trace = []

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
        super().apply_step(grads)  # parameters now hold the observation
        gain = self.kalman.step_gain()
        self.gain_trace.append(gain)
        for p, th in zip(self.params, self.theta_hat):
            th += gain * (p.data - th)
            p.data = th.copy()
