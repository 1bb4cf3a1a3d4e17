"""Online adaptation method catalog."""

from .accumulate import GradientAccumulator
from .base import Adapter, GradientAdapter
from .cmf import CmfAdapter, KalmanState
from .deyo import DeyoAdapter
from .eta import EtaAdapter
from .roid import (
    PriorState,
    RoidAdapter,
    certainty_diversity_weights,
    prior_correction,
    weight_ensemble,
)
from .sar import SarAdapter, sam_gradient
from .simple import Bn1Adapter, SourceAdapter
from .tent import TentAdapter
from .tpt import TptAdapter
from .vte import VteAdapter

ADAPTERS = {
    "source": SourceAdapter,
    "bn1": Bn1Adapter,
    "tent": TentAdapter,
    "eta": EtaAdapter,
    "sar": SarAdapter,
    "deyo": DeyoAdapter,
    "roid": RoidAdapter,
    "cmf": CmfAdapter,
    "tpt": TptAdapter,
    "vte": VteAdapter,
}

__all__ = [
    "ADAPTERS",
    "Adapter",
    "GradientAdapter",
    "GradientAccumulator",
    "SourceAdapter",
    "Bn1Adapter",
    "TentAdapter",
    "EtaAdapter",
    "SarAdapter",
    "DeyoAdapter",
    "RoidAdapter",
    "CmfAdapter",
    "TptAdapter",
    "VteAdapter",
    "KalmanState",
    "PriorState",
    "certainty_diversity_weights",
    "weight_ensemble",
    "prior_correction",
    "sam_gradient",
]
