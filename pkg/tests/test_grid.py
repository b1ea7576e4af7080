import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualhmm import grid


def test_below_of_a_point_is_its_box():
    idx = grid.below([[2, 1]])
    np.testing.assert_array_equal(idx, [[0, 0], [0, 1], [1, 0], [1, 1], [2, 0], [2, 1]])


def test_below_of_several_points_is_their_union():
    idx = grid.below([[2, 0], [0, 2]])
    assert {tuple(r) for r in idx} == {(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)}


def test_shift_adds_the_datum():
    np.testing.assert_array_equal(grid.shift([[0, 1], [2, 0]], [1, 1]), [[1, 2], [3, 1]])


def test_logsumexp_handles_infinities():
    assert grid.logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    assert grid.logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0 + np.log(2.0))


@given(st.lists(st.integers(0, 4), min_size=1, max_size=3))
def test_below_size_is_product_rule(m):
    assert grid.below([m]).shape[0] == int(np.prod(np.array(m) + 1))


@settings(max_examples=50)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_normalize_sums_to_one(lw):
    out, tot = grid.logsumexp_normalize(np.array(lw))
    np.testing.assert_allclose(np.exp(out).sum(), 1.0, rtol=1e-12)
    np.testing.assert_allclose(tot, np.log(np.sum(np.exp(np.array(lw) - max(lw)))) + max(lw), rtol=1e-12)


def test_merge_log_weights_sums_duplicates():
    idx, lw = grid.merge_log_weights(np.array([[1], [0], [1]]), np.log([0.2, 0.5, 0.3]))
    np.testing.assert_array_equal(idx, [[0], [1]])
    np.testing.assert_allclose(np.exp(lw), [0.5, 0.5])
