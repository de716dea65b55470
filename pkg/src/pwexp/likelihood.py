"""Log-space priors and likelihoods for piecewise exponential segments.

All segment marginals integrate the hazard against a Gamma(alpha, beta)
prior (shape/rate). Everything returns log values; raw marginals underflow
once a segment holds more than a few hundred events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SurvivalDataset

DEFAULT_BETA = {"years": 1.0, "months": 12.0, "days": 365.0}


@dataclass(frozen=True)
class SegmentStats:
    events: int
    exposure: float

    def __post_init__(self):
        if self.events < 0 or self.exposure < 0:
            raise ValueError("segment events and exposure must be nonnegative")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the change-point model.

    ``hyperprior`` is an optional ``(shape, rate)`` Gamma prior on ``beta``;
    when set, ``beta`` is only the chain's starting value.
    ``birth_prob`` is the birth/death split used for 0 < k < K.
    """

    alpha: float = 1.0
    beta: float = 1.0
    poisson_rate: float = 1.0
    max_changepoints: int = 10
    hyperprior: tuple[float, float] | None = None
    birth_prob: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.poisson_rate <= 0:
            raise ValueError("alpha, beta and poisson_rate must be positive")
        if self.max_changepoints < 0:
            raise ValueError("max_changepoints must be nonnegative")
        if self.hyperprior is not None:
            shape, rate = self.hyperprior
            if shape <= 0 or rate <= 0:
                raise ValueError("hyperprior shape and rate must be positive")
        if not 0 < self.birth_prob < 1:
            raise ValueError("birth_prob must lie in (0, 1)")

    @classmethod
    def for_timescale(cls, timescale: str, **kwargs) -> "PriorConfig":
        """Defaults with beta matched to the time unit (1/yr, 12/mo, 365/day)."""
        kwargs.setdefault("beta", DEFAULT_BETA[timescale])
        return cls(**kwargs)


def _check_hyper(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"alpha and beta must be positive, got alpha={alpha}, beta={beta}")


def log_marginal_segment(seg: SegmentStats, alpha: float, beta: float) -> float:
    """Log of the integral of lam^D exp(-lam T) against Gamma(alpha, beta)."""
    _check_hyper(alpha, beta)
    a_post = alpha + seg.events
    return (alpha * math.log(beta) - math.lgamma(alpha) + math.lgamma(a_post)
            - a_post * math.log(beta + seg.exposure))


def log_segment_loglik(lam: float, seg: SegmentStats) -> float:
    if not lam > 0:
        raise ValueError(f"hazard must be positive, got {lam}")
    return seg.events * math.log(lam) - lam * seg.exposure


def cumulative_hazard(t, tau: Sequence[float], lam: Sequence[float]) -> np.ndarray:
    """Piecewise-linear cumulative hazard at ``t`` for breakpoints ``tau``."""
    t = np.asarray(t, dtype=float)
    edges = np.concatenate(([0.0], np.asarray(tau, dtype=float)))
    widths = np.diff(np.concatenate((edges, [np.inf])))
    lam = np.asarray(lam, dtype=float)
    overlap = np.clip(t[..., None] - edges, 0.0, widths)
    return overlap @ lam


def segment_index(t, tau: Sequence[float]) -> np.ndarray:
    """Segment j (0-based) with ``tau[j-1] < t <= tau[j]``."""
    return np.searchsorted(np.asarray(tau, dtype=float), t, side="left")


def _check_tau(tau: np.ndarray) -> None:
    if np.any(np.diff(tau) <= 0) or np.any(tau <= 0):
        raise ValueError("change-point times must be positive and strictly increasing")


def log_piecewise_loglik_timescale(ds: SurvivalDataset, tau: Sequence[float], lam: Sequence[float]) -> float:
    """Log-likelihood of the raw observations under a piecewise constant hazard."""
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if len(lam) != len(tau) + 1:
        raise ValueError("need exactly one more hazard than change-points")
    if np.any(lam <= 0):
        raise ValueError("hazards must be positive")
    _check_tau(tau)
    cum = cumulative_hazard(ds.times, tau, lam)
    log_h = np.log(lam[segment_index(ds.times, tau)])
    return float(np.sum(np.where(ds.events, log_h, 0.0) - cum))


def log_prior_k(k: int, poisson_rate: float) -> float:
    """Poisson log-pmf. Truncation at K is applied by the sampler's move set."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return k * math.log(poisson_rate) - poisson_rate - math.lgamma(k + 1)


def log_binom(n: int, r: int) -> float:
    if r < 0 or r > n:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)


def log_prior_locations(s: Sequence[int], k: int, d: int) -> float:
    """Log prior of change-point indices ``s`` among ``d`` event positions.

    Mass is proportional to the product of (spacing - 1) over the k+1
    segments, so adjacent change-points (or one next to either end) get
    zero mass and this returns ``-inf``.
    """
    s = list(s)
    if len(s) != k:
        raise ValueError(f"expected {k} change-point indices, got {len(s)}")
    bounds = [0, *s, d]
    if any(b <= a for a, b in zip(bounds, bounds[1:])):
        raise ValueError(f"change-point indices must satisfy 0 < s_1 < ... < s_k < d={d}, got {s}")
    out = -log_binom(d - 1, 2 * k + 1)
    for a, b in zip(bounds, bounds[1:]):
        if b - a == 1:
            return -math.inf
        out += math.log(b - a - 1)
    return out
