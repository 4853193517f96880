"""Fairness regularisation of neural networks with distance covariance."""

from .dcov import ccdcov, dcov2_unbiased, dcorr2, jdcov2, separate_sum
from .errors import FairDcovError

__version__ = "0.1.0"

__all__ = ["FairDcovError", "ccdcov", "dcorr2", "dcov2_unbiased", "jdcov2", "separate_sum"]
