"""Bayesian piecewise exponential survival models with an unknown number of change-points."""

from .data import (GapTimeData, KMCurve, SurvivalDataset, ValidationError, gap_times, kaplan_meier,
                   load_dataset, read_csv)
from .likelihood import PriorConfig, SegmentStats
from .sampler import ChangePointState, SamplerRefusal, Trace, run_chain, run_chains

__all__ = [
    "ChangePointState", "GapTimeData", "KMCurve", "PriorConfig", "SamplerRefusal", "SegmentStats",
    "SurvivalDataset", "Trace", "ValidationError", "gap_times", "kaplan_meier", "load_dataset",
    "read_csv", "run_chain", "run_chains",
]
