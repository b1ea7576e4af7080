import numpy as np
import pytest

from dualhmm.inference import loglik
from dualhmm.model import ObservationSeries
from dualhmm.particle import bootstrap_pf, ffbs_particle_smoother, gamma_kde, systematic_resample


def test_systematic_resampling_counts_are_within_one(rng):
    w = rng.dirichlet(np.ones(20))
    a = systematic_resample(w, rng)
    counts = np.bincount(a, minlength=20)
    assert counts.sum() == 20
    assert np.all(np.abs(counts - 20 * w) < 1.0 + 1e-12)


def test_single_time_pf_is_monte_carlo_of_the_marginal(cir_model, rng):
    s = ObservationSeries.from_rows([0.0], [6])
    est = [bootstrap_pf(s, cir_model, 4000, rng).loglik for _ in range(20)]
    exact = loglik(s, cir_model)
    assert abs(np.mean(est) - exact) < 3 * np.std(est) / np.sqrt(20) + 1e-3


def test_pf_brackets_exact_likelihood(cir_model, cir_series, rng):
    est = np.array([bootstrap_pf(cir_series, cir_model, 2000, rng).loglik for _ in range(20)])
    assert abs(est.mean() - loglik(cir_series, cir_model)) < 3 * est.std(ddof=1)


def test_pf_rejects_bad_arguments(cir_model, cir_series, rng):
    with pytest.raises(ValueError):
        bootstrap_pf(cir_series, cir_model, 0, rng)
    with pytest.raises(ValueError):
        bootstrap_pf(cir_series, cir_model, 10, rng, ess_frac=1.5)


def test_particle_smoother_weights_are_normalized(cir_model, cir_series, rng):
    clouds = ffbs_particle_smoother(cir_series, cir_model, 200, rng)
    assert len(clouds) == len(cir_series)
    for c in clouds:
        np.testing.assert_allclose(c.weights.sum(), 1.0, rtol=1e-10)


def test_particle_smoother_needs_a_transition_density(wf_model, wf_series, rng):
    with pytest.raises(NotImplementedError):
        ffbs_particle_smoother(wf_series, wf_model, 10, rng)


def test_gamma_kde_kernels_have_the_sample_as_mode(rng):
    x = rng.gamma(3.0, 2.0, size=50)
    k = gamma_kde(x, bandwidth=0.1)
    np.testing.assert_allclose((k.shapes - 1.0) / k.rates, x, rtol=1e-12)
    with pytest.raises(ValueError):
        gamma_kde(np.array([1.0, -2.0]))
