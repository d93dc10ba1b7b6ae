"""Robust subspace recovery with Tyler's M-estimator and its subspace-constrained variant."""

from .data import Dataset, GroundTruth
from .estimators import (
    EstimatorConfig,
    EstimatorResult,
    IterationRecord,
    IterationTrace,
    projected_tme,
    robust_weights,
    ste_solve,
    ste_step,
    tme_solve,
    tme_step,
)
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
