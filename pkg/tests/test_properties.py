"""Invariants of the exact recursions, checked on random inputs."""

import numpy as np
from hypothesis import given, settings, strategies as st

from dualhmm import kernels
from dualhmm.cir import CirModel, CirParams
from dualhmm.inference import PruneRule, loglik, prune, run_filter
from dualhmm.model import ObservationSeries
from dualhmm.wf import WfModel, WfParams

cir_params = st.builds(CirParams, st.floats(0.5, 6.0), st.floats(0.2, 4.0), st.floats(0.5, 3.0),
                       st.floats(0.5, 2.0))
counts = st.lists(st.integers(0, 12), min_size=1, max_size=6)
gaps = st.lists(st.floats(0.01, 2.0), min_size=5, max_size=5)


def series_from(ys, dts):
    times = np.concatenate([[0.0], np.cumsum(dts[: len(ys) - 1])])
    return ObservationSeries.from_rows(times, ys)


@settings(max_examples=40, deadline=None)
@given(cir_params, counts, gaps)
def test_filter_mixtures_are_normalized(params, ys, dts):
    fo = run_filter(series_from(ys, dts), CirModel(params), PruneRule.off())
    for mix in fo.filtering + fo.predictive:
        np.testing.assert_allclose(mix.weights.sum(), 1.0, rtol=1e-12)
    assert np.all(fo.log_marginals <= 1e-12)


@settings(max_examples=40, deadline=None)
@given(cir_params, counts, gaps, st.sampled_from(["fixed_number:2", "fixed_mass:0.9", "fixed_threshold:0.05"]))
def test_pruned_likelihood_matches_reference_path(params, ys, dts, rule):
    s = series_from(ys, dts)
    m = CirModel(params)
    r = PruneRule.parse(rule)
    np.testing.assert_allclose(loglik(s, m, r), run_filter(s, m, r).loglik, rtol=1e-11, atol=1e-11)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 0), min_size=1, max_size=30), st.floats(0.05, 1.0))
def test_mass_pruning_keeps_enough_mass_in_order(lw, rho):
    lw = np.array(lw)
    keep, dropped = prune(lw, PruneRule.fixed_mass(rho))
    w = np.exp(lw) / np.exp(lw).sum()
    assert np.all(np.diff(keep) > 0)
    assert w[keep].sum() >= rho - 1e-12
    # dropping the smallest kept component would fall short of rho
    if keep.size > 1:
        assert w[keep].sum() - w[keep].min() < rho + 1e-12
    np.testing.assert_allclose(np.exp(dropped) if np.isfinite(dropped) else 0.0, 1 - w[keep].sum(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=8, unique=True), st.floats(0.01, 0.99))
def test_binomial_pushforward_preserves_mass(src, p):
    idx = np.array(sorted(src), dtype=np.int64)[:, None]
    lw = -np.arange(idx.shape[0], dtype=float)
    _, out = kernels.pushforward(idx, lw, survive_prob=p)
    np.testing.assert_allclose(np.exp(out).sum(), np.exp(lw).sum(), rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.3, 4.0), min_size=2, max_size=3),
       st.lists(st.integers(0, 4), min_size=3, max_size=3), st.floats(0.05, 3.0))
def test_wf_death_rows_are_distributions(alpha, m, t):
    model = WfModel(WfParams(tuple(alpha)))
    m = np.array(m[: len(alpha)])
    row = model.death_row(m, t)
    np.testing.assert_allclose(row.probs.sum(), 1.0, atol=1e-10)
    assert np.all(row.indices <= m)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(0.2, 5.0), st.floats(0.3, 3.0), st.integers(0, 25), st.floats(0.05, 5.0))
def test_cir_predictive_probabilities_sum_to_one(delta, gamma, sigma, m, theta):
    model = CirModel(CirParams(delta, gamma, sigma, 1.0))
    ys = np.arange(4000)
    lp = np.array([model.log_marginal(np.array([m]), theta, y) for y in ys])
    np.testing.assert_allclose(np.exp(lp).sum(), 1.0, atol=1e-9)
