"""Posterior summaries, curves, fit statistics and convergence diagnostics."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .data import KMCurve, SurvivalDataset
from .sampler import Trace

Traces = Union[Trace, Sequence[Trace]]

QUANTILES = (0.025, 0.5, 0.975)
CURVE_KINDS = ("hazard", "survival", "cumulative_hazard")


def _as_list(traces: Traces) -> list[Trace]:
    return [traces] if isinstance(traces, Trace) else list(traces)


def model_posterior_probs(traces: Traces) -> dict[int, float]:
    """Share of retained states with each number of change-points."""
    counts = Counter()
    for tr in _as_list(traces):
        counts.update(tr.k.tolist())
    total = sum(counts.values())
    if total == 0:
        raise ValueError("empty trace")
    return {k: counts[k] / total for k in sorted(counts)}


def modal_k(traces: Traces) -> int:
    probs = model_posterior_probs(traces)
    return max(probs, key=lambda k: (probs[k], -k))


@dataclass(frozen=True)
class ChangepointSummary:
    k: int
    n_states: int
    mean: np.ndarray
    sd: np.ndarray


def changepoint_summaries(traces: Traces, k: int) -> ChangepointSummary:
    """Mean and SD of change-point times over states with exactly ``k`` change-points."""
    times = [tr.changepoint_times(st) for tr in _as_list(traces) for st in tr.states if st.k == k]
    if not times:
        return ChangepointSummary(k, 0, np.empty(0), np.empty(0))
    arr = np.array(times).reshape(len(times), k)
    return ChangepointSummary(k, len(times), arr.mean(axis=0), arr.std(axis=0))


def hazard_summaries(traces: Traces, k: int) -> ChangepointSummary:
    """Mean and SD of the k+1 segment hazards over states with ``k`` change-points."""
    _require_hazards(traces)
    haz = [st.hazards for tr in _as_list(traces) for st in tr.states if st.k == k]
    if not haz:
        return ChangepointSummary(k, 0, np.empty(0), np.empty(0))
    arr = np.array(haz)
    return ChangepointSummary(k, len(haz), arr.mean(axis=0), arr.std(axis=0))


def _require_hazards(traces: Traces) -> None:
    if not all(tr.has_hazards for tr in _as_list(traces)):
        raise ValueError("trace has no sampled hazards; rerun the chain with uncollapse=True")


def _draw_groups(traces: Traces) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (tau, lam) arrays of shape (n, k) and (n, k+1), grouped by k."""
    by_k: dict[int, tuple[list, list]] = {}
    for tr in _as_list(traces):
        x = tr.gaps.event_times
        for st in tr.states:
            taus, lams = by_k.setdefault(st.k, ([], []))
            taus.append(x[np.asarray(st.s, dtype=np.int64) - 1])
            lams.append(st.hazards)
    for k in sorted(by_k):
        taus, lams = by_k[k]
        yield np.array(taus, dtype=float).reshape(len(taus), k), np.array(lams, dtype=float)


def _cumhaz(tau: np.ndarray, lam: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cumulative hazard for each draw (rows) at each time in ``t`` (columns)."""
    n, k = tau.shape
    edges = np.concatenate((np.zeros((n, 1)), tau, np.full((n, 1), np.inf)), axis=1)
    out = np.zeros((n, len(t)))
    for j in range(k + 1):
        width = edges[:, j + 1] - edges[:, j]
        out += lam[:, j, None] * np.clip(t[None, :] - edges[:, j, None], 0.0, width[:, None])
    return out


def _hazard(tau: np.ndarray, lam: np.ndarray, t: np.ndarray) -> np.ndarray:
    seg = (t[None, None, :] > tau[:, :, None]).sum(axis=1)
    return np.take_along_axis(lam, seg, axis=1)


def _chunks(tau, lam, size=4096):
    for i in range(0, len(lam), size):
        yield tau[i:i + size], lam[i:i + size]


@dataclass(frozen=True)
class CurveSummary:
    grid: np.ndarray
    mean: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    kind: str
    draws: list | None = None  # (tau, lam) groups kept for exact integration

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mean", "q2.5", "q50", "q97.5"])
            for row in zip(self.grid, self.mean, self.q025, self.q50, self.q975):
                w.writerow([f"{v:.10g}" for v in row])


def default_grid(horizon: float, points: int = 200) -> np.ndarray:
    return np.linspace(0.0, horizon, points)


def _curve(traces: Traces, grid, kind: str) -> CurveSummary:
    _require_hazards(traces)
    grid = np.asarray(grid, dtype=float)
    groups = list(_draw_groups(traces))
    rows = []
    for tau, lam in groups:
        for tc, lc in _chunks(tau, lam):
            if kind == "hazard":
                rows.append(_hazard(tc, lc, grid))
            else:
                cum = _cumhaz(tc, lc, grid)
                rows.append(np.exp(-cum) if kind == "survival" else cum)
    vals = np.concatenate(rows)
    q = np.quantile(vals, QUANTILES, axis=0)
    return CurveSummary(grid, vals.mean(axis=0), q[0], q[1], q[2], kind, groups)


def hazard_curve(traces: Traces, grid) -> CurveSummary:
    """Pointwise posterior mean and quantiles of the step hazard."""
    return _curve(traces, grid, "hazard")


def survival_curve(traces: Traces, grid) -> CurveSummary:
    return _curve(traces, grid, "survival")


def cumulative_hazard_curve(traces: Traces, grid) -> CurveSummary:
    return _curve(traces, grid, "cumulative_hazard")


def _exact_auc(tau: np.ndarray, lam: np.ndarray, horizon: float) -> np.ndarray:
    """Integral of exp(-cumhaz) over [0, horizon], per draw, in closed form."""
    n, k = tau.shape
    edges = np.concatenate((np.zeros((n, 1)), np.minimum(tau, horizon), np.full((n, 1), horizon)), axis=1)
    total = np.zeros(n)
    cum = np.zeros(n)
    for j in range(k + 1):
        width = edges[:, j + 1] - edges[:, j]
        rate = lam[:, j]
        # (1 - exp(-rate w)) / rate, stable as rate * w -> 0
        total += np.exp(-cum) * np.where(rate * width > 1e-12, -np.expm1(-rate * width) / np.where(rate > 0, rate, 1.0), width)
        cum += rate * width
    return total


def auc(curve: CurveSummary, horizon: float) -> float:
    """Area under the mean survival curve on [0, horizon]."""
    if curve.kind != "survival":
        raise ValueError("auc needs a survival curve")
    if horizon > curve.grid[-1] + 1e-12 or horizon < 0:
        raise ValueError(f"horizon {horizon} outside curve grid [0, {curve.grid[-1]}]")
    if curve.draws is not None:
        n = sum(len(lam) for _, lam in curve.draws)
        return float(sum(_exact_auc(tau, lam, horizon).sum() for tau, lam in curve.draws) / n)
    g = curve.grid[curve.grid <= horizon]
    v = curve.mean[: len(g)]
    if g[-1] < horizon:
        g = np.append(g, horizon)
        v = np.append(v, np.interp(horizon, curve.grid, curve.mean))
    return float(np.trapezoid(v, g))


def mean_survival(traces_or_curve, t) -> np.ndarray:
    """Posterior mean survival at arbitrary times."""
    t = np.asarray(t, dtype=float)
    groups = traces_or_curve.draws if isinstance(traces_or_curve, CurveSummary) else list(_draw_groups(traces_or_curve))
    total = np.zeros(len(t))
    n = 0
    for tau, lam in groups:
        for tc, lc in _chunks(tau, lam):
            total += np.exp(-_cumhaz(tc, lc, t)).sum(axis=0)
            n += len(lc)
    return total / n


def abs_difference(curve: CurveSummary, km: KMCurve, horizon: float, points: int = 4001) -> float:
    """Integral over [0, horizon] of |mean model survival - KM|.

    The KM step function is integrated exactly piece by piece; the model
    curve is evaluated on a fine grid within each KM step.
    """
    jumps = km.step_times[(km.step_times > 0) & (km.step_times < horizon)]
    edges = np.concatenate(([0.0], jumps, [horizon]))
    t = np.union1d(np.linspace(0.0, horizon, points), edges)
    if curve.draws is not None:
        model = mean_survival(curve, t)
    else:
        model = np.interp(t, curve.grid, curve.mean)
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        sel = (t >= a) & (t <= b)
        level = km(a)
        total += np.trapezoid(np.abs(model[sel] - level), t[sel])
    return float(total)


def pointwise_loglik(traces: Traces, ds: SurvivalDataset) -> np.ndarray:
    """Per-draw, per-subject log-likelihood under each sampled hazard step."""
    _require_hazards(traces)
    rows = []
    for tr in _as_list(traces):
        x = tr.gaps.event_times
        for st in tr.states:
            tau = x[np.asarray(st.s, dtype=np.int64) - 1]
            lam = np.asarray(st.hazards)
            seg = np.searchsorted(tau, ds.times, side="left")
            rows.append(np.where(ds.events, np.log(lam[seg]), 0.0) - _cumhaz(tau[None], lam[None], ds.times)[0])
    return np.array(rows)


@dataclass(frozen=True)
class FitStatistics:
    waic: float
    neg2_log_pml: float
    pointwise_dims: tuple[int, int]


def _check_matrix(ll) -> np.ndarray:
    ll = np.asarray(ll, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValueError("need a (draws, observations) matrix with at least 2 draws")
    return ll


def waic(ll) -> float:
    """-2 * (lppd - p_waic) with p_waic the summed posterior variance of the log-likelihood."""
    ll = _check_matrix(ll)
    m = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(m)
    p = ll.var(axis=0, ddof=1)
    return float(-2.0 * np.sum(lppd - p))


def pml(ll) -> float:
    """-2 log pseudo-marginal likelihood; each CPO is a harmonic mean over draws."""
    ll = _check_matrix(ll)
    m = ll.shape[0]
    log_cpo = np.log(m) - logsumexp(-ll, axis=0)
    return float(-2.0 * np.sum(log_cpo))


def fit_statistics(traces: Traces, ds: SurvivalDataset) -> FitStatistics:
    ll = pointwise_loglik(traces, ds)
    return FitStatistics(waic(ll), pml(ll), ll.shape)


def psrf(traces: Sequence[Trace] | Sequence[Sequence[float]], functional: str = "k") -> float:
    """Gelman-Rubin potential scale reduction factor on a scalar functional.

    ``functional`` is ``"k"`` (number of change-points) or
    ``"log_posterior"``. Raw equal-length sequences are also accepted.
    """
    if functional not in ("k", "log_posterior"):
        raise ValueError(f"unknown functional {functional!r}")
    seqs = [getattr(tr, functional) if isinstance(tr, Trace) else tr for tr in traces]
    x = np.array([np.asarray(s, dtype=float) for s in seqs])
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("psrf needs at least two equal-length chains")
    m, n = x.shape
    if n < 2:
        raise ValueError("chains must have at least 2 draws")
    means = x.mean(axis=1)
    b = n * means.var(ddof=1)
    w = x.var(axis=1, ddof=1).mean()
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    v = (n - 1) / n * w + b / n
    return float(np.sqrt(v / w))
