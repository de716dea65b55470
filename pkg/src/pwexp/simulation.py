"""Simulate piecewise exponential survival data and replicate fitting studies."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import changepoint_summaries, modal_k
from .data import SurvivalDataset, _build, gap_times
from .likelihood import PriorConfig
from .sampler import chain_seeds, run_chain


@dataclass(frozen=True)
class SimScenario:
    tau: tuple[float, ...] = ()
    lam: tuple[float, ...] = (0.5,)
    n: int = 100
    follow_up: float = 2.0
    random_censor_pct: float = 0.0
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if len(self.lam) != len(self.tau) + 1:
            raise ValueError("need exactly one more hazard than change-points")
        if any(v <= 0 for v in self.lam):
            raise ValueError("hazards must be positive")
        if any(b <= a for a, b in zip((0.0, *self.tau), self.tau)):
            raise ValueError("change-points must be positive and increasing")
        if self.tau and self.follow_up <= self.tau[-1]:
            raise ValueError("follow_up must exceed the last change-point")
        if self.follow_up <= 0 or self.n < 1 or self.replicates < 1:
            raise ValueError("follow_up, n and replicates must be positive")
        if not 0 <= self.random_censor_pct <= 0.5:
            raise ValueError(f"random_censor_pct must lie in [0, 0.5], got {self.random_censor_pct}")

    @property
    def k(self) -> int:
        return len(self.tau)


_SCENARIO_KEYS = {"tau", "lambda", "n", "follow_up", "random_censor_pct", "replicates", "seed"}


def parse_scenario(text: str) -> SimScenario:
    """Parse ``key = value`` lines; lists are comma separated, ``#`` starts a comment.

    Recognized keys: tau, lambda, n, follow_up, random_censor_pct,
    replicates, seed.
    """
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _SCENARIO_KEYS:
            raise ValueError(f"line {lineno}: unknown scenario key {key!r}")
        kv[key] = value

    def floats(v):
        return tuple(float(x) for x in v.split(",") if x.strip())

    args = {}
    if "tau" in kv:
        args["tau"] = floats(kv["tau"])
    if "lambda" in kv:
        args["lam"] = floats(kv["lambda"])
    for key in ("n", "replicates", "seed"):
        if key in kv:
            args[key] = int(kv[key])
    for key in ("follow_up", "random_censor_pct"):
        if key in kv:
            args[key] = float(kv[key])
    return SimScenario(**args)


def load_scenario(path: str | Path) -> SimScenario:
    return parse_scenario(Path(path).read_text())


def sample_piecewise_exponential(tau: Sequence[float], lam: Sequence[float], n: int,
                                 rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform draws through the piecewise-linear cumulative hazard."""
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(lam, dtype=float)
    edges = np.concatenate(([0.0], tau))
    cum_at_edges = np.concatenate(([0.0], np.cumsum(lam[:-1] * np.diff(edges))))
    e = rng.exponential(size=n)
    seg = np.searchsorted(cum_at_edges, e, side="right") - 1
    return edges[seg] + (e - cum_at_edges[seg]) / lam[seg]


def apply_censoring(times: np.ndarray, scenario: SimScenario, rng: np.random.Generator) -> SurvivalDataset:
    """Random censoring for a 2*pct share of subjects, then administrative censoring.

    Censoring times follow the same distribution as the event times, so an
    exposed subject is censored with probability one half; the first
    ``ceil(2 * pct * n)`` subjects by index are the exposed ones.
    """
    times = np.asarray(times, dtype=float)
    n = len(times)
    n_exposed = min(n, math.ceil(2 * scenario.random_censor_pct * n - 1e-9))
    cens = np.full(n, np.inf)
    cens[:n_exposed] = sample_piecewise_exponential(scenario.tau, scenario.lam, n_exposed, rng)
    observed = np.minimum(times, cens)
    events = times <= cens
    late = observed > scenario.follow_up
    observed = np.where(late, scenario.follow_up, observed)
    events &= ~late
    return _build(observed, events, "years")


def simulate_dataset(scenario: SimScenario, rng: np.random.Generator) -> SurvivalDataset:
    times = sample_piecewise_exponential(scenario.tau, scenario.lam, scenario.n, rng)
    return apply_censoring(times, scenario, rng)


@dataclass
class SimReport:
    scenario: dict
    pct_correct_model: float
    modal_k: list[int | None]
    tau_mean: list[float] = field(default_factory=list)
    tau_sd: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    iterations: int = 0
    burn_in: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _replicate(scenario: SimScenario, prior: PriorConfig, iterations: int, burn_in: int, seed: int):
    data_seed, chain_seed = chain_seeds(seed, 2)
    ds = simulate_dataset(scenario, np.random.default_rng(data_seed))
    try:
        trace = run_chain(gap_times(ds), prior, iterations, burn_in, seed=chain_seed)
    except ValueError as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    k_hat = modal_k(trace)
    tau_hat = None
    if k_hat == scenario.k and k_hat > 0:
        tau_hat = changepoint_summaries(trace, k_hat).mean.tolist()
    return k_hat, tau_hat, None


def run_simulation_study(scenario: SimScenario, prior: PriorConfig | None = None, iterations: int = 20_750,
                         burn_in: int = 750, workers: int = 1) -> SimReport:
    """Simulate, fit and score every replicate of a scenario.

    A replicate is correct when its modal posterior k equals the true k;
    change-point means are averaged over correct replicates only.
    """
    prior = prior or PriorConfig()
    seeds = chain_seeds(scenario.seed, scenario.replicates)
    args = [(scenario, prior, iterations, burn_in, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, *zip(*args)))
    else:
        results = [_replicate(*a) for a in args]

    ks = [r[0] for r in results]
    taus = np.array([r[1] for r in results if r[1] is not None], dtype=float).reshape(-1, max(scenario.k, 1))
    failures = [f"replicate {i}: {r[2]}" for i, r in enumerate(results) if r[2]]
    correct = sum(k == scenario.k for k in ks)
    echo = asdict(scenario)
    echo["lambda"] = list(echo.pop("lam"))
    echo["tau"] = list(echo["tau"])
    return SimReport(
        scenario=echo,
        pct_correct_model=100.0 * correct / scenario.replicates,
        modal_k=ks,
        tau_mean=taus.mean(axis=0).tolist() if len(taus) else [],
        tau_sd=taus.std(axis=0, ddof=1).tolist() if len(taus) > 1 else [],
        failures=failures,
        iterations=iterations,
        burn_in=burn_in,
    )
