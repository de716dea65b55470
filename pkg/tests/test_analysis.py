import math

import numpy as np
import pytest

from conftest import small_gaps
from pwexp.analysis import (CurveSummary, abs_difference, auc, changepoint_summaries, default_grid, hazard_curve,
                            model_posterior_probs, modal_k, pml, pointwise_loglik, psrf, survival_curve, waic)
from pwexp.data import GapTimeData, KMCurve, gap_times, load_dataset
from pwexp.likelihood import PriorConfig, log_piecewise_loglik_timescale
from pwexp.sampler import ChangePointState, Trace, run_chain


def make_trace(states, gaps=None):
    gaps = gaps or GapTimeData(np.arange(1.0, 11), np.ones(10, dtype=int), np.ones(10), 0.0)
    return Trace(list(states), len(states), 0, 0, gaps, PriorConfig(), np.zeros(len(states)))


def test_model_probs_counting():
    tr = make_trace([ChangePointState(0), *[ChangePointState(1, (5,))] * 3])
    probs = model_posterior_probs(tr)
    assert probs == {0: 0.25, 1: 0.75}
    assert sum(probs.values()) == 1.0
    assert modal_k(tr) == 1


def test_changepoint_summaries():
    tr = make_trace([ChangePointState(2, (3, 7))] * 5 + [ChangePointState(1, (4,))])
    cp = changepoint_summaries(tr, 2)
    np.testing.assert_array_equal(cp.mean, [3.0, 7.0])
    np.testing.assert_array_equal(cp.sd, [0.0, 0.0])
    assert changepoint_summaries(tr, 3).n_states == 0


def test_hazard_curve_flat():
    tr = make_trace([ChangePointState(0, (), (0.3,))])
    c = hazard_curve(tr, default_grid(5.0))
    np.testing.assert_allclose(c.mean, 0.3)
    np.testing.assert_allclose(c.q50, 0.3)


def test_hazard_curve_mixture_steps():
    # change-points at event times 3 and 6
    tr = make_trace([ChangePointState(1, (3,), (1.0, 2.0)), ChangePointState(1, (6,), (1.0, 2.0))])
    c = hazard_curve(tr, np.array([1.0, 3.0, 4.0, 6.0, 7.0]))
    np.testing.assert_allclose(c.mean, [1.0, 1.0, 1.5, 1.5, 2.0])


def test_hazards_required():
    with pytest.raises(ValueError, match="uncollapse"):
        hazard_curve(make_trace([ChangePointState(0)]), [1.0])


def test_survival_curve_and_auc():
    tr = make_trace([ChangePointState(0, (), (1.0,))])
    c = survival_curve(tr, default_grid(2.0))
    assert c.mean[0] == 1.0
    assert np.interp(1.0, c.grid, c.mean) == pytest.approx(math.exp(-1), abs=1e-3)
    assert auc(c, 2.0) == pytest.approx(1 - math.exp(-2), abs=1e-12)
    with pytest.raises(ValueError):
        auc(c, 3.0)


def test_auc_small_hazard_limit():
    tr = make_trace([ChangePointState(0, (), (1e-9,))])
    assert auc(survival_curve(tr, default_grid(4.0)), 4.0) == pytest.approx(4.0, rel=1e-8)


def test_auc_piecewise_exact():
    # hazard 1 until event time 2, then 0.5
    tr = make_trace([ChangePointState(1, (2,), (1.0, 0.5))])
    expected = (1 - math.exp(-2)) + math.exp(-2) * (1 - math.exp(-0.5 * 3)) / 0.5
    assert auc(survival_curve(tr, default_grid(5.0)), 5.0) == pytest.approx(expected, rel=1e-12)


def test_survival_monotone(stanford_full):
    gaps = gap_times(stanford_full.censor_at(2.0))
    tr = run_chain(gaps, PriorConfig(), 1500, 500, seed=1, uncollapse=True)
    c = survival_curve(tr, default_grid(10.0))
    for arr in (c.mean, c.q025, c.q50, c.q975):
        assert np.all(np.diff(arr) <= 1e-15)
        assert arr[0] == 1.0 and np.all((arr >= 0) & (arr <= 1))
    assert auc(c, 10.0) < 10.0


def test_abs_difference_identical_and_offset():
    grid = np.linspace(0, 3, 301)
    flat = KMCurve(np.array([10.0]), np.array([0.5]))
    same = CurveSummary(grid, np.full_like(grid, 1.0), grid, grid, grid, "survival")
    assert abs_difference(same, flat, 3.0) == pytest.approx(0.0, abs=1e-12)
    shifted = CurveSummary(grid, np.full_like(grid, 0.9), grid, grid, grid, "survival")
    assert abs_difference(shifted, flat, 3.0) == pytest.approx(0.1 * 3.0, abs=1e-12)


def test_abs_difference_step_curve_bounded_by_grid():
    # a gridded copy of a staircase only differs on the ramps next to each jump
    km = KMCurve(np.array([1.0, 2.0]), np.array([0.5, 0.25]))
    grid = np.linspace(0, 3, 301)
    copy = CurveSummary(grid, km(grid), grid, grid, grid, "survival")
    assert abs_difference(copy, km, 3.0) <= (0.5 + 0.25) * 0.01


def test_pointwise_loglik_entries():
    ds = load_dataset([(1.0, 1), (2.0, 0), (3.0, 1)])
    gaps = gap_times(ds)
    tr = make_trace([ChangePointState(0, (), (1.0,))], gaps)
    ll = pointwise_loglik(tr, ds)
    np.testing.assert_allclose(ll[0], [-1.0, -2.0, -3.0])


def test_pointwise_rows_sum_to_full_loglik():
    ds = load_dataset([(0.3, 1), (0.9, 0), (1.2, 1), (1.2, 1), (2.0, 1), (2.5, 0), (3.1, 1), (4.0, 1), (4.4, 0)])
    gaps = gap_times(ds)
    tr = run_chain(gaps, PriorConfig(max_changepoints=2), 300, 0, seed=3, uncollapse=True)
    ll = pointwise_loglik(tr, ds)
    for row, st in zip(ll, tr.states):
        full = log_piecewise_loglik_timescale(ds, tr.changepoint_times(st), st.hazards)
        assert row.sum() == pytest.approx(full, abs=1e-10)


def test_waic_pml_hand_example():
    ll = np.array([[-1.0, -2.0], [-2.0, -1.0]])
    # per column: draws (-1, -2); lppd = log((e^-1 + e^-2)/2), sample variance 0.5
    lppd = math.log((math.exp(-1) + math.exp(-2)) / 2)
    assert waic(ll) == pytest.approx(-2 * 2 * (lppd - 0.5), abs=1e-12)
    # harmonic mean: 2 / (e^1 + e^2)
    log_cpo = math.log(2 / (math.exp(1) + math.exp(2)))
    assert pml(ll) == pytest.approx(-2 * 2 * log_cpo, abs=1e-12)


def test_waic_pml_identical_rows():
    ll = np.tile([-1.0, -0.5, -3.0], (5, 1))
    assert waic(ll) == pytest.approx(9.0)
    assert pml(ll) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        waic(ll[:1])
    with pytest.raises(ValueError):
        pml(ll[:1])


def test_psrf():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    assert psrf([x, x]) == pytest.approx(1.0, abs=1e-3)
    assert psrf([np.ones(10), np.ones(10)]) == 1.0
    assert psrf([x, x + 10]) > 5
    with pytest.raises(ValueError):
        psrf([x])


def test_psrf_on_traces():
    gaps = small_gaps(8)
    traces = [run_chain(gaps, PriorConfig(max_changepoints=2), 5000, 500, seed=s) for s in range(3)]
    assert psrf(traces, "k") < 1.05
    assert psrf(traces, "log_posterior") < 1.05
