"""Multilevel Monte Carlo resource adequacy estimation.

Level models (storage dispatch policies and learned surrogates) over a
shared scenario space of annual net-generation-margin traces, combined
into unbiased variance-optimal estimators of LOLE and EENS.
"""

from .kernels import backend_name
from .mlmc import (LevelModel, MlmcEstimate, optimal_allocation, run_mlmc,
                   sample_level_pair, speed_measure)
from .stats import METRICS, LevelStats, OutcomeVector

__version__ = "0.1.0"

__all__ = [
    "METRICS",
    "LevelStats",
    "LevelModel",
    "MlmcEstimate",
    "OutcomeVector",
    "backend_name",
    "optimal_allocation",
    "run_mlmc",
    "sample_level_pair",
    "speed_measure",
    "__version__",
]
