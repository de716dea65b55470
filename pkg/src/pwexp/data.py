"""Right-censored survival data, gap-time reduction and Kaplan-Meier."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMESCALES = ("years", "months", "days")


class ValidationError(ValueError):
    """Raised for malformed survival records."""


@dataclass(frozen=True)
class SurvivalDataset:
    """Observations sorted by time. ``event`` is True for an observed death."""

    times: np.ndarray
    events: np.ndarray
    timescale: str = "years"

    def __post_init__(self):
        self.times.setflags(write=False)
        self.events.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    def censor_at(self, horizon: float) -> "SurvivalDataset":
        """Administratively censor every observation beyond ``horizon``."""
        late = self.times > horizon
        times = np.where(late, horizon, self.times)
        events = self.events & ~late
        return _build(times, events, self.timescale)

    def rescale(self, factor: float, timescale: str | None = None) -> "SurvivalDataset":
        """Divide all times by ``factor`` (e.g. 365 to go from days to years)."""
        return _build(self.times / factor, self.events.copy(), timescale or self.timescale)


def _build(times, events, timescale) -> SurvivalDataset:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    # events before censorings at equal times: a censoring tied with a death
    # is treated as happening just after it
    order = np.lexsort((~events, times))
    return SurvivalDataset(times[order].copy(), events[order].copy(), timescale)


def load_dataset(records: Iterable[Sequence], timescale: str = "years") -> SurvivalDataset:
    """Validate ``(time, status)`` records and return a sorted dataset.

    ``status`` must be 0 (censored) or 1 (event). Rows are numbered from 1 in
    error messages.
    """
    if timescale not in TIMESCALES:
        raise ValidationError(f"unknown timescale {timescale!r}")
    times, events = [], []
    for row, rec in enumerate(records, start=1):
        try:
            t, status = rec
            t = float(t)
            status = float(status)
        except (TypeError, ValueError):
            raise ValidationError(f"row {row}: expected numeric (time, status), got {rec!r}") from None
        if not math.isfinite(t) or t <= 0:
            raise ValidationError(f"row {row}: time must be positive and finite, got {t}")
        if status not in (0.0, 1.0):
            raise ValidationError(f"row {row}: status must be 0 or 1, got {status:g}")
        times.append(t)
        events.append(status == 1.0)
    if not any(events):
        raise ValidationError("no events in dataset")
    return _build(times, events, timescale)


def read_csv(path: str | Path, timescale: str = "years") -> SurvivalDataset:
    """Read a ``time,status`` CSV with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header[:2] != ["time", "status"]:
            raise ValidationError(f"{path}: expected header 'time,status', got {','.join(header)!r}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    return load_dataset(((r[0], r[1]) if len(r) >= 2 else r for r in rows), timescale)


def write_csv(ds: SurvivalDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "status"])
        for t, e in zip(ds.times, ds.events):
            w.writerow([repr(float(t)), int(e)])


@dataclass(frozen=True)
class GapTimeData:
    """Sufficient statistics of a dataset on the scale of distinct event times.

    ``exposures[i]`` is the total time at risk accumulated by the cohort
    between distinct event times ``event_times[i-1]`` and ``event_times[i]``
    (with an implicit event time 0 before the first). Exposure after the last
    event is kept separately in ``trailing_exposure``.
    """

    event_times: np.ndarray
    multiplicities: np.ndarray
    exposures: np.ndarray
    trailing_exposure: float = 0.0
    cum_events: np.ndarray = field(init=False, repr=False)
    cum_exposure: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.event_times, dtype=float)
        m = np.asarray(self.multiplicities, dtype=np.int64)
        y = np.asarray(self.exposures, dtype=float)
        if not (len(x) == len(m) == len(y)) or len(x) == 0:
            raise ValueError("event_times, multiplicities and exposures must be equal, nonzero length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("event_times must be strictly increasing")
        if np.any(m < 1) or np.any(y < 0) or self.trailing_exposure < 0:
            raise ValueError("multiplicities must be positive and exposures nonnegative")
        object.__setattr__(self, "event_times", x)
        object.__setattr__(self, "multiplicities", m)
        object.__setattr__(self, "exposures", y)
        object.__setattr__(self, "cum_events", np.concatenate(([0], np.cumsum(m))))
        # prefix exposures; the trailing exposure is folded into the final
        # prefix so the last segment always carries it
        ce = np.concatenate(([0.0], np.cumsum(y)))
        ce[-1] += self.trailing_exposure
        object.__setattr__(self, "cum_exposure", ce)
        for a in (x, m, y, self.cum_events, ce):
            a.setflags(write=False)

    @property
    def n_distinct(self) -> int:
        """Number of distinct event times (the index range for change-points)."""
        return len(self.event_times)

    @property
    def total_events(self) -> int:
        return int(self.cum_events[-1])

    def segment(self, a: int, b: int) -> tuple[int, float]:
        """(events, exposure) over distinct-time indices ``a+1 .. b``."""
        return int(self.cum_events[b] - self.cum_events[a]), float(self.cum_exposure[b] - self.cum_exposure[a])


def gap_times(ds: SurvivalDataset) -> GapTimeData:
    """Reduce a dataset to exposures between consecutive distinct event times."""
    if not ds.events.any():
        raise ValidationError("no events in dataset")
    x, m = np.unique(ds.times[ds.events], return_counts=True)
    lower = np.concatenate(([0.0], x[:-1]))
    at_risk = ds.n - np.searchsorted(ds.times, x, side="left")
    y = (x - lower) * at_risk
    # censored strictly inside (x_{i-1}, x_i): partial exposure from x_{i-1}
    bin_ = np.searchsorted(x, ds.times, side="left")
    inside = (bin_ < len(x)) & (ds.times < x[np.minimum(bin_, len(x) - 1)])
    y += np.bincount(bin_[inside], weights=ds.times[inside] - lower[bin_[inside]], minlength=len(x))
    tail = ds.times[ds.times > x[-1]]
    trailing = float((tail - x[-1]).sum())
    return GapTimeData(x, m, y, trailing)


@dataclass(frozen=True)
class KMCurve:
    """Product-limit estimate; ``survival_probs[i]`` holds on ``[step_times[i], step_times[i+1])``."""

    step_times: np.ndarray
    survival_probs: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.step_times, t, side="right") - 1
        return np.where(idx < 0, 1.0, self.survival_probs[np.clip(idx, 0, None)])


def kaplan_meier(ds: SurvivalDataset) -> KMCurve:
    x, deaths = np.unique(ds.times[ds.events], return_counts=True)
    at_risk = ds.n - np.searchsorted(ds.times, x, side="left")
    return KMCurve(x, np.cumprod(1.0 - deaths / at_risk))
