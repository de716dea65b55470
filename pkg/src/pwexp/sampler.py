"""Collapsed birth/death sampler over hazard change-points.

Segment hazards are integrated out against their Gamma prior, so the chain
moves over (k, s) only: the number of change-points and their positions
among the distinct event times. Hazards (and, with a hyperprior, the Gamma
rate beta) are drawn afterwards from their full conditionals.

Index conventions: ``s`` holds 1-based positions into the distinct event
times, ``0 < s_1 < ... < s_k < d``. Segment j covers positions
``s_{j-1}+1 .. s_j`` with ``s_0 = 0`` and ``s_{k+1} = d``; a change-point at
position i therefore sits at event time ``event_times[i-1]``.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .data import GapTimeData
from .likelihood import PriorConfig, log_binom


class SamplerRefusal(ValueError):
    """The data cannot support any change-point model."""


@dataclass(frozen=True)
class ChangePointState:
    k: int
    s: tuple[int, ...] = ()
    hazards: tuple[float, ...] | None = None
    beta_current: float | None = None

    def __post_init__(self):
        if len(self.s) != self.k:
            raise ValueError(f"k={self.k} but {len(self.s)} change-point indices")
        if any(b <= a for a, b in zip((0, *self.s), self.s)):
            raise ValueError(f"change-point indices must be positive and increasing, got {self.s}")
        if self.hazards is not None and len(self.hazards) != self.k + 1:
            raise ValueError("need k+1 hazards")


@dataclass(frozen=True)
class MoveProbabilities:
    """Birth (``birth[k]``) and death (``death[k]``) probabilities for k = 0..K."""

    birth: tuple[float, ...]
    death: tuple[float, ...]

    @classmethod
    def from_prior(cls, prior: PriorConfig) -> "MoveProbabilities":
        K = prior.max_changepoints
        a = [prior.birth_prob] * (K + 1)
        a[0] = 1.0
        a[K] = 0.0
        return cls(tuple(a), tuple(1.0 - x if k > 0 else 0.0 for k, x in enumerate(a)))


@dataclass
class Trace:
    """Post-burn-in states of one chain."""

    states: list[ChangePointState]
    iterations: int
    burn_in: int
    seed: int
    gaps: GapTimeData
    prior: PriorConfig
    log_posterior: np.ndarray
    proposed: dict[str, int] = field(default_factory=dict)
    accepted: dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    @property
    def k(self) -> np.ndarray:
        return np.fromiter((st.k for st in self.states), dtype=np.int64, count=len(self.states))

    @property
    def has_hazards(self) -> bool:
        return bool(self.states) and all(st.hazards is not None for st in self.states)

    def changepoint_times(self, state: ChangePointState) -> np.ndarray:
        return self.gaps.event_times[np.asarray(state.s, dtype=np.int64) - 1]


class _Collapsed:
    """Collapsed posterior terms for one dataset; beta may change between calls."""

    def __init__(self, gaps: GapTimeData, prior: PriorConfig, beta: float | None = None):
        if gaps.n_distinct < 3:
            raise SamplerRefusal(f"need at least 3 distinct event times, got {gaps.n_distinct}")
        self.d = gaps.n_distinct
        self.cm = gaps.cum_events
        self.ce = gaps.cum_exposure
        self._cm = gaps.cum_events.tolist()
        self._ce = gaps.cum_exposure.tolist()
        self.alpha = prior.alpha
        self.K = prior.max_changepoints
        self.log_rate = math.log(prior.poisson_rate)
        self.moves = MoveProbabilities.from_prior(prior)
        self.set_beta(prior.beta if beta is None else beta)

    def set_beta(self, beta: float) -> None:
        self.beta = beta
        self.log_beta = math.log(beta)
        self.const = self.alpha * self.log_beta - math.lgamma(self.alpha)

    def lm(self, a: int, b: int) -> float:
        """Segment log-marginal over positions a+1..b."""
        ap = self.alpha + (self._cm[b] - self._cm[a])
        return self.const + math.lgamma(ap) - ap * math.log(self.beta + self._ce[b] - self._ce[a])

    def log_posterior(self, s: Sequence[int]) -> float:
        k = len(s)
        bounds = (0, *s, self.d)
        out = k * self.log_rate - math.lgamma(k + 1) - log_binom(self.d - 1, 2 * k + 1)
        for a, b in zip(bounds, bounds[1:]):
            if b - a < 2:
                return -math.inf
            out += self.lm(a, b) + math.log(b - a - 1)
        return out

    def birth_ratio(self, s: Sequence[int], c: int) -> float:
        """log A for inserting a change-point at position c into s."""
        k = len(s)
        i = bisect.bisect_left(s, c)
        a = s[i - 1] if i > 0 else 0
        b = s[i] if i < k else self.d
        if c - a < 2 or b - c < 2:
            return -math.inf
        d = self.d
        out = self.lm(a, c) + self.lm(c, b) - self.lm(a, b)
        out += math.log(c - a - 1) + math.log(b - c - 1) - math.log(b - a - 1)
        out += log_binom(d - 1, 2 * k + 1) - log_binom(d - 1, 2 * k + 3)
        out += self.log_rate - math.log(k + 1)
        # proposal: death picks 1 of k+1, birth picks 1 of d-k-1 free slots
        out += math.log(self.moves.death[k + 1] / (k + 1)) - math.log(self.moves.birth[k] / (d - k - 1))
        return out

    def relocate_logweights(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        c = np.arange(a + 2, b - 1)
        cm, ce, al, be = self.cm, self.ce, self.alpha, self.beta
        dl = al + (cm[c] - cm[a])
        dr = al + (cm[b] - cm[c])
        lw = (gammaln(dl) - dl * np.log(be + ce[c] - ce[a])
              + gammaln(dr) - dr * np.log(be + ce[b] - ce[c])
              + np.log(c - a - 1.0) + np.log(b - c - 1.0))
        return c, lw

    def segment_posteriors(self, s: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Gamma shape and rate of each segment hazard given s and current beta."""
        bounds = np.array((0, *s, self.d))
        shape = self.alpha + np.diff(self.cm[bounds])
        rate = self.beta + np.diff(self.ce[bounds])
        return shape, rate


def _beta_of(state: ChangePointState, prior: PriorConfig) -> float:
    return prior.beta if state.beta_current is None else state.beta_current


def birth_log_ratio(state: ChangePointState, position: int, gaps: GapTimeData, prior: PriorConfig) -> float:
    """log acceptance ratio for adding a change-point at ``position``."""
    if position in state.s or not 0 < position < gaps.n_distinct:
        raise ValueError(f"position {position} is not a free slot")
    if state.k >= prior.max_changepoints:
        raise ValueError("already at the maximum number of change-points")
    return _Collapsed(gaps, prior, _beta_of(state, prior)).birth_ratio(state.s, position)


def death_log_ratio(state: ChangePointState, j: int, gaps: GapTimeData, prior: PriorConfig) -> float:
    """log acceptance ratio for removing the j-th (0-based) change-point."""
    s = list(state.s)
    c = s.pop(j)
    return -_Collapsed(gaps, prior, _beta_of(state, prior)).birth_ratio(s, c)


def propose_birth(state: ChangePointState, gaps: GapTimeData, prior: PriorConfig,
                  rng: np.random.Generator) -> tuple[ChangePointState | None, float]:
    """Draw a free slot uniformly; returns ``(None, -inf)`` when no move is possible."""
    free = [i for i in range(1, gaps.n_distinct) if i not in state.s]
    if state.k >= prior.max_changepoints or not free:
        return None, -math.inf
    c = free[int(rng.random() * len(free))]
    log_a = birth_log_ratio(state, c, gaps, prior)
    s = tuple(sorted((*state.s, c)))
    return ChangePointState(state.k + 1, s, beta_current=state.beta_current), log_a


def propose_death(state: ChangePointState, gaps: GapTimeData, prior: PriorConfig,
                  rng: np.random.Generator) -> tuple[ChangePointState | None, float]:
    if state.k == 0:
        return None, -math.inf
    j = int(rng.random() * state.k)
    log_a = death_log_ratio(state, j, gaps, prior)
    s = state.s[:j] + state.s[j + 1:]
    return ChangePointState(state.k - 1, s, beta_current=state.beta_current), log_a


def _draw_index(lw: np.ndarray, u: float) -> int:
    w = np.exp(lw - lw.max())
    cw = np.cumsum(w)
    return min(int(np.searchsorted(cw, u * cw[-1], side="right")), len(w) - 1)


def location_conditional(state: ChangePointState, j: int, gaps: GapTimeData,
                         prior: PriorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Admissible positions for change-point j and their normalized probabilities."""
    model = _Collapsed(gaps, prior, _beta_of(state, prior))
    a = state.s[j - 1] if j > 0 else 0
    b = state.s[j + 1] if j + 1 < state.k else gaps.n_distinct
    c, lw = model.relocate_logweights(a, b)
    w = np.exp(lw - lw.max()) if len(lw) else lw
    return c, w / w.sum() if len(w) else w


def resample_location(state: ChangePointState, gaps: GapTimeData, prior: PriorConfig,
                      rng: np.random.Generator) -> ChangePointState:
    """Gibbs update of one uniformly chosen change-point position."""
    if state.k == 0:
        return state
    model = _Collapsed(gaps, prior, _beta_of(state, prior))
    j = int(rng.random() * state.k)
    new = _relocate(model, list(state.s), j, rng.random())
    return replace(state, s=tuple(new), hazards=None)


def _relocate(model: _Collapsed, s: list[int], j: int, u: float) -> list[int]:
    a = s[j - 1] if j > 0 else 0
    b = s[j + 1] if j + 1 < len(s) else model.d
    if b - a <= 4:
        # at most one position with nonzero mass
        return s
    c, lw = model.relocate_logweights(a, b)
    s[j] = int(c[_draw_index(lw, u)])
    return s


def sample_hazards(state: ChangePointState, gaps: GapTimeData, prior: PriorConfig,
                   rng: np.random.Generator) -> ChangePointState:
    """Draw every segment hazard from its Gamma full conditional."""
    model = _Collapsed(gaps, prior, _beta_of(state, prior))
    shape, rate = model.segment_posteriors(state.s)
    return replace(state, hazards=tuple(rng.gamma(shape, 1.0 / rate).tolist()))


def sample_beta(state: ChangePointState, prior: PriorConfig, rng: np.random.Generator) -> float:
    """Draw the Gamma rate beta given sampled hazards under its Gamma hyperprior."""
    if prior.hyperprior is None:
        raise ValueError("sample_beta needs a hyperprior on beta")
    if state.hazards is None:
        raise ValueError("sample_beta needs sampled hazards; draw them first")
    shape, rate = _beta_posterior(state.k, sum(state.hazards), prior)
    return float(rng.gamma(shape, 1.0 / rate))


def _beta_posterior(k: int, hazard_sum: float, prior: PriorConfig) -> tuple[float, float]:
    h_shape, h_rate = prior.hyperprior
    return (k + 1) * prior.alpha + h_shape, hazard_sum + h_rate


def log_collapsed_posterior(state: ChangePointState, gaps: GapTimeData, prior: PriorConfig) -> float:
    """Unnormalized log posterior of (k, s) with hazards integrated out."""
    return _Collapsed(gaps, prior, _beta_of(state, prior)).log_posterior(state.s)


def run_chain(gaps: GapTimeData, prior: PriorConfig, iterations: int = 20_750, burn_in: int = 750,
              seed: int = 0, uncollapse: bool = False, hyper: bool = False,
              initial: ChangePointState | None = None) -> Trace:
    """Run one chain and keep the states after ``burn_in``.

    Each iteration proposes a birth (probability a_k) or a death, then
    redraws one change-point position from its full conditional. With
    ``uncollapse`` the segment hazards are drawn afterwards; ``hyper``
    additionally redraws beta and implies ``uncollapse``.
    """
    if not iterations > burn_in >= 0:
        raise ValueError("need iterations > burn_in >= 0")
    if hyper and prior.hyperprior is None:
        raise ValueError("hyper=True needs prior.hyperprior")
    uncollapse = uncollapse or hyper
    rng = np.random.default_rng(seed)
    model = _Collapsed(gaps, prior)
    d, K = model.d, model.K
    birth_p = model.moves.birth
    if initial is not None and initial.beta_current is not None:
        model.set_beta(initial.beta_current)
    s = list(initial.s) if initial is not None else []
    beta = model.beta
    log_post = model.log_posterior(s)
    proposed = {"birth": 0, "death": 0, "relocate": 0}
    accepted = {"birth": 0, "death": 0, "relocate": 0}
    states: list[ChangePointState] = []
    log_posts = np.empty(iterations - burn_in)
    state = None
    changed = True

    for it in range(iterations):
        k = len(s)
        if rng.random() < birth_p[k]:
            proposed["birth"] += 1
            if d - k - 1 > 0:
                # pick the r-th free slot among positions 1..d-1
                r = int(rng.random() * (d - k - 1))
                c = r + 1
                for x in s:
                    if x <= c:
                        c += 1
                    else:
                        break
                log_a = model.birth_ratio(s, c)
                if log_a >= 0 or rng.random() < math.exp(log_a):
                    bisect.insort(s, c)
                    accepted["birth"] += 1
                    changed = True
        elif k > 0:
            proposed["death"] += 1
            j = int(rng.random() * k)
            rest = s[:j] + s[j + 1:]
            log_a = -model.birth_ratio(rest, s[j])
            if log_a >= 0 or rng.random() < math.exp(log_a):
                s = rest
                accepted["death"] += 1
                changed = True

        if s:
            proposed["relocate"] += 1
            j = int(rng.random() * len(s))
            old = s[j]
            s = _relocate(model, s, j, rng.random())
            if s[j] != old:
                accepted["relocate"] += 1
                changed = True

        hazards = None
        if uncollapse:
            shape, rate = model.segment_posteriors(s)
            lam = rng.gamma(shape, 1.0 / rate)
            hazards = tuple(lam.tolist())
            if hyper:
                b_shape, b_rate = _beta_posterior(len(s), float(lam.sum()), prior)
                beta = float(rng.gamma(b_shape, 1.0 / b_rate))
                model.set_beta(beta)
                changed = True

        if changed:
            log_post = model.log_posterior(s)
        if it >= burn_in:
            if uncollapse or changed or state is None:
                state = ChangePointState(len(s), tuple(s), hazards, beta if hyper else None)
            states.append(state)
            log_posts[it - burn_in] = log_post
        changed = False

    return Trace(states, iterations, burn_in, int(seed), gaps, prior, log_posts, proposed, accepted)


def chain_seeds(seed: int, n: int) -> list[int]:
    """Independent per-chain (or per-replicate) integer seeds derived from one seed."""
    return [int(ss.generate_state(1, dtype=np.uint64)[0]) for ss in np.random.SeedSequence(seed).spawn(n)]


def _run_chain_kwargs(kwargs):
    return run_chain(**kwargs)


def run_chains(gaps: GapTimeData, prior: PriorConfig, chains: int = 4, iterations: int = 20_750,
               burn_in: int = 750, seed: int = 0, uncollapse: bool = False, hyper: bool = False,
               workers: int = 1) -> list[Trace]:
    """Run independent chains; results do not depend on ``workers``."""
    jobs = [dict(gaps=gaps, prior=prior, iterations=iterations, burn_in=burn_in, seed=cs,
                 uncollapse=uncollapse, hyper=hyper) for cs in chain_seeds(seed, chains)]
    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_chain_kwargs, jobs))
    return [run_chain(**job) for job in jobs]


def save_traces(path, traces: Sequence[Trace]) -> None:
    """Write chains to a compressed ``.npz`` (padded index/hazard arrays)."""
    K = traces[0].prior.max_changepoints
    arrays = {}
    for c, tr in enumerate(traces):
        n = len(tr.states)
        s = np.zeros((n, max(K, 1)), dtype=np.int64)
        haz = np.full((n, K + 1), np.nan)
        beta = np.full(n, np.nan)
        for i, st in enumerate(tr.states):
            s[i, :st.k] = st.s
            if st.hazards is not None:
                haz[i, :st.k + 1] = st.hazards
            if st.beta_current is not None:
                beta[i] = st.beta_current
        arrays.update({f"k{c}": tr.k, f"s{c}": s, f"hazards{c}": haz, f"beta{c}": beta,
                       f"log_posterior{c}": tr.log_posterior,
                       f"meta{c}": np.array([tr.iterations, tr.burn_in, tr.seed], dtype=np.uint64)})
    g, p = traces[0].gaps, traces[0].prior
    arrays.update(event_times=g.event_times, multiplicities=g.multiplicities, exposures=g.exposures,
                  trailing=np.array([g.trailing_exposure]), chains=np.array([len(traces)]),
                  prior=np.array([p.alpha, p.beta, p.poisson_rate, p.max_changepoints, p.birth_prob,
                                  *(p.hyperprior or (np.nan, np.nan))]))
    np.savez_compressed(path, **arrays)


def load_traces(path) -> list[Trace]:
    z = np.load(path)
    gaps = GapTimeData(z["event_times"], z["multiplicities"], z["exposures"], float(z["trailing"][0]))
    a, b, rate, K, bp, hs, hr = z["prior"].tolist()
    prior = PriorConfig(a, b, rate, int(K), None if math.isnan(hs) else (hs, hr), bp)
    out = []
    for c in range(int(z["chains"][0])):
        ks, s, haz, beta = z[f"k{c}"], z[f"s{c}"], z[f"hazards{c}"], z[f"beta{c}"]
        states = []
        for i, k in enumerate(ks.tolist()):
            h = haz[i, :k + 1]
            states.append(ChangePointState(k, tuple(s[i, :k].tolist()),
                                           None if np.isnan(h[0]) else tuple(h.tolist()),
                                           None if np.isnan(beta[i]) else float(beta[i])))
        iterations, burn_in, seed = (int(v) for v in z[f"meta{c}"])
        out.append(Trace(states, iterations, burn_in, seed, gaps, prior, z[f"log_posterior{c}"]))
    return out
