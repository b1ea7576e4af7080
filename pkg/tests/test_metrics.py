import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dualhmm.metrics import (DirichletMixture, GammaMixture, UnsupportedMixtureError, l2_distance,
                             likelihood_rmse, max_l2_over_time)

shape_st = st.floats(0.6, 30.0)
rate_st = st.floats(0.1, 10.0)


def gamma_mix(draw_shapes, draw_rates, draw_w):
    return GammaMixture(np.array(draw_shapes), np.array(draw_rates), np.array(draw_w))


def test_gamma_l2_matches_quadrature():
    g = GammaMixture(np.array([2.0, 5.5]), np.array([1.0, 2.0]), np.array([0.3, 0.7]))
    h = GammaMixture.single(3.0, 1.2)
    val, _ = quad(lambda x: (g.pdf(x) - h.pdf(x)) ** 2, 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    assert l2_distance(g, h) == pytest.approx(np.sqrt(val), rel=1e-8)


def test_l2_of_identical_mixtures_is_zero():
    g = GammaMixture(np.array([2.0, 5.5]), np.array([1.0, 2.0]), np.array([0.3, 0.7]))
    assert l2_distance(g, g) == 0.0
    d = DirichletMixture(np.array([[1.0, 2.0, 3.0]]), np.ones(1))
    assert l2_distance(d, d) == 0.0


def test_shapes_at_or_below_half_rejected():
    with pytest.raises(UnsupportedMixtureError):
        l2_distance(GammaMixture.single(0.5, 1.0), GammaMixture.single(2.0, 1.0))
    with pytest.raises(UnsupportedMixtureError):
        l2_distance(DirichletMixture(np.array([[0.3, 1.0]]), np.ones(1)),
                    DirichletMixture(np.array([[1.0, 1.0]]), np.ones(1)))


def test_mixed_families_rejected():
    with pytest.raises(TypeError):
        l2_distance(GammaMixture.single(2.0, 1.0), DirichletMixture(np.array([[1.0, 1.0]]), np.ones(1)))


def test_dirichlet_two_types_is_beta_l2():
    g = DirichletMixture(np.array([[2.0, 3.0], [4.0, 1.5]]), np.array([0.5, 0.5]))
    h = DirichletMixture(np.array([[3.0, 3.0]]), np.ones(1))

    def f(x):
        p = np.array([[x, 1.0 - x]])
        return float((g.pdf(p) - h.pdf(p))[0] ** 2)
    val, _ = quad(f, 0, 1, epsabs=0, epsrel=1e-12, limit=200)
    assert l2_distance(g, h) == pytest.approx(np.sqrt(val), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(shape_st, rate_st, st.floats(0.05, 1.0)), min_size=1, max_size=4),
       st.lists(st.tuples(shape_st, rate_st, st.floats(0.05, 1.0)), min_size=1, max_size=4),
       st.lists(st.tuples(shape_st, rate_st, st.floats(0.05, 1.0)), min_size=1, max_size=4))
def test_gamma_l2_is_a_metric(a, b, c):
    g, h, k = (gamma_mix(*zip(*x)) for x in (a, b, c))
    dgh, dhg = l2_distance(g, h), l2_distance(h, g)
    assert dgh >= 0.0
    assert dgh == pytest.approx(dhg, rel=1e-9, abs=1e-12)
    assert dgh <= l2_distance(g, k) + l2_distance(k, h) + 1e-9


def test_max_over_time_and_rmse():
    g = [GammaMixture.single(2.0, 1.0), GammaMixture.single(3.0, 1.0)]
    h = [GammaMixture.single(2.0, 1.0), GammaMixture.single(3.5, 1.0)]
    assert max_l2_over_time(g, h) == l2_distance(g[1], h[1])
    assert likelihood_rmse([1.0, 3.0], 2.0) == 1.0
    with pytest.raises(ValueError):
        max_l2_over_time(g, h[:1])
