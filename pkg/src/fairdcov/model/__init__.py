"""Network, fairness-regularised objectives and the AdaHessian optimiser."""

from .network import NetworkSpec
from .objective import Batch, ObjectiveSpec

__all__ = ["Batch", "NetworkSpec", "ObjectiveSpec"]
