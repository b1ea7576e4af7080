import warnings

import numpy as np
import pytest
from scipy import stats

from dualhmm.inference import (PruneRule, cir_filter_compact, cost_to_go_recursion, loglik, prune,
                               run_filter, run_smoother)
from dualhmm.metrics import DirichletMixture, GammaMixture, l2_distance
from dualhmm.model import ObservationSeries


def naive_cir_filter(series, model):
    """Dictionary-based dual filter with scipy distributions (independent oracle)."""
    p = model.params
    shape0, theta0, lam = p.delta / 2.0, p.gamma / p.sigma ** 2, p.lam
    w, theta, ll = {0: 1.0}, theta0, 0.0
    for i, (t, rows) in enumerate(zip(series.times, series.counts)):
        if i > 0:
            dt = t - series.times[i - 1]
            q = theta0 / (theta * np.expm1(2 * p.gamma * dt) + theta0)
            new = {}
            for m, wm in w.items():
                for n in range(m + 1):
                    new[n] = new.get(n, 0.0) + wm * stats.binom.pmf(n, m, q)
            w = new
            # fixes theta0, tends to theta0 as dt grows
            theta = theta0 * theta / (theta * -np.expm1(-2 * p.gamma * dt) + theta0 * np.exp(-2 * p.gamma * dt))
        for y in rows[:, 0]:
            lik = {m: wm * stats.nbinom.pmf(y, shape0 + m, theta / (theta + lam)) for m, wm in w.items()}
            mu = sum(lik.values())
            ll += np.log(mu)
            w = {m + int(y): v / mu for m, v in lik.items()}
            theta += lam
    return w, theta, ll


def test_cir_filter_matches_naive_recursion(cir_model, cir_series):
    w, theta, ll = naive_cir_filter(cir_series, cir_model)
    fo = run_filter(cir_series, cir_model, PruneRule.off())
    last = fo.filtering[-1]
    got = {int(m): float(v) for m, v in zip(last.indices[:, 0], last.weights) if v > 0}
    # thinning drops binomial tail terms below 1e-30 of each row's mode
    keys = sorted(set(got) | set(w))
    np.testing.assert_allclose([got.get(m, 0.0) for m in keys], [w.get(m, 0.0) for m in keys],
                               rtol=1e-10, atol=1e-25)
    assert last.theta == pytest.approx(theta, rel=1e-12)
    assert fo.loglik == pytest.approx(ll, rel=1e-12)


def test_fused_and_reference_cir_likelihoods_agree(cir_model, cir_series, backend):
    for rule in (PruneRule.off(), PruneRule.fixed_number(3), PruneRule.fixed_mass(0.9),
                 PruneRule.fixed_threshold(1e-2)):
        ref = run_filter(cir_series, cir_model, rule).loglik
        assert loglik(cir_series, cir_model, rule) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_compact_filter_matches_reference(cir_model, cir_series):
    for rule in (PruneRule.off(), PruneRule.fixed_number(4)):
        ref = run_filter(cir_series, cir_model, rule)
        cf = cir_filter_compact(cir_series, cir_model, rule)
        np.testing.assert_allclose(cf.log_marginals, ref.log_marginals, rtol=1e-12)
        for a, b in zip(cf.filtering, ref.filtering):
            g = GammaMixture.from_weighted(a, cir_model)
            h = GammaMixture.from_weighted(b, cir_model)
            assert l2_distance(g, h) < 1e-12


def test_prune_off_equals_full_mass_bitwise(cir_model, cir_series, wf_model, wf_series):
    assert loglik(cir_series, cir_model, PruneRule.off()) == loglik(cir_series, cir_model, PruneRule.fixed_mass(1.0))
    assert loglik(wf_series, wf_model, PruneRule.off()) == loglik(wf_series, wf_model, PruneRule.fixed_mass(1.0))


def test_predictive_support_follows_product_law(wf_model, wf_series):
    fo = run_filter(wf_series, wf_model, PruneRule.off())
    tot = wf_series.totals()
    for i, pred in enumerate(fo.predictive):
        assert len(pred) == int(np.prod(1 + tot[:i].sum(axis=0)))


def test_prune_rules_select_expected_entries():
    lw = np.log(np.array([0.1, 0.4, 0.05, 0.3, 0.15]))
    keep, dropped = prune(lw, PruneRule.fixed_number(2))
    np.testing.assert_array_equal(keep, [1, 3])
    assert np.exp(dropped) == pytest.approx(0.3)
    keep, _ = prune(lw, PruneRule.fixed_mass(0.8))
    np.testing.assert_array_equal(keep, [1, 3, 4])
    keep, _ = prune(lw, PruneRule.fixed_threshold(0.1))
    np.testing.assert_array_equal(keep, [0, 1, 3, 4])
    keep, _ = prune(lw, PruneRule.fixed_threshold(0.5, relative=True))
    np.testing.assert_array_equal(keep, [1, 3])


def test_prune_ties_break_by_position():
    keep, _ = prune(np.log([0.25, 0.25, 0.25, 0.25]), PruneRule.fixed_number(2))
    np.testing.assert_array_equal(keep, [0, 1])


def test_threshold_removing_everything_warns_and_keeps_the_largest():
    with pytest.warns(RuntimeWarning):
        keep, _ = prune(np.log([0.3, 0.7]), PruneRule.fixed_threshold(0.9))
    np.testing.assert_array_equal(keep, [1])


@pytest.mark.parametrize("text", ["fixed_number:0", "fixed_number:2.5", "fixed_mass:0", "fixed_mass:1.5",
                                  "fixed_threshold:-1", "bogus:1", "fixed_mass:x"])
def test_invalid_prune_rules_rejected(text):
    with pytest.raises(ValueError):
        PruneRule.parse(text)


def test_prune_rule_text_round_trip():
    for text in ("off", "fixed_number:10", "fixed_mass:0.99", "fixed_threshold:0.001", "fixed_threshold_rel:0.01"):
        assert PruneRule.parse(str(PruneRule.parse(text))) == PruneRule.parse(text)


def test_smoothing_at_final_time_equals_filtering(cir_model, cir_series, wf_model, wf_series):
    out = run_smoother(cir_series, cir_model, PruneRule.off(), return_parts=True)
    g = GammaMixture.from_weighted(out.smoothing[-1], cir_model)
    h = GammaMixture.from_weighted(out.filter.filtering[-1], cir_model)
    assert l2_distance(g, h) <= 1e-12
    out = run_smoother(wf_series, wf_model, PruneRule.off(), return_parts=True)
    g = DirichletMixture.from_weighted(out.smoothing[-1], wf_model)
    h = DirichletMixture.from_weighted(out.filter.filtering[-1], wf_model)
    assert l2_distance(g, h) <= 1e-12


def test_cost_to_go_at_start_gives_the_likelihood(cir_model, cir_series, wf_model, wf_series):
    # p(y_{0:T}) = int pi(x) f(y_0 | x) p(y_{1:T} | x) dx, checked by one-dimensional quadrature for CIR
    from scipy.integrate import quad
    ctg = cost_to_go_recursion(cir_series, cir_model, PruneRule.off())[0]
    rows = cir_series.counts[0]

    def f(x):
        return np.exp(cir_model.log_pi_density(x) + cir_model.log_emission_block(rows, np.array([x]))[0]
                      + ctg.log_evaluate(np.array([x]), cir_model))
    val, _ = quad(f, 0, 200, limit=400, epsabs=0, epsrel=1e-12)
    assert np.log(val) == pytest.approx(loglik(cir_series, cir_model), rel=1e-9)


def test_zero_counts_keep_a_single_component(cir_model):
    s = ObservationSeries.from_rows([0.0, 0.5, 1.0], [0, 0, 0])
    fo = run_filter(s, cir_model, PruneRule.off())
    assert all(len(m) == 1 for m in fo.filtering)


def test_wf_pruned_filter_close_to_exact(wf_model, wf_series):
    exact = loglik(wf_series, wf_model, PruneRule.off())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        approx = loglik(wf_series, wf_model, PruneRule.fixed_mass(0.999))
    assert abs(approx - exact) < 1e-2
