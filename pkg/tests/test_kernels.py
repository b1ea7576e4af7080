"""The compiled kernels and their numpy fallbacks give the same numbers."""

import numpy as np
import pytest

from dualhmm import _kernels_py, kernels
from dualhmm.inference import PruneRule, cir_filter_compact
from dualhmm.trajectory import cir_backward_step

compiled = pytest.importorskip("dualhmm._kernels")


def test_binomial_pushforward_backends_agree(rng):
    src = np.sort(rng.choice(200, 40, replace=False)).astype(np.int64)
    lw = rng.normal(size=40)
    lw -= lw.max()
    lf = kernels.log_factorials(200)
    a = np.zeros(200)
    b = np.zeros(200)
    compiled.pushforward_binomial(src, lw, 0.37, lf, a)
    _kernels_py.pushforward_binomial(src, lw, 0.37, lf, b)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)


def test_sparse_pushforward_backends_agree(wf_model, rng):
    idx = np.array([[3, 1, 0], [2, 2, 2], [0, 4, 1]], dtype=np.int64)
    lw = np.log([0.5, 0.3, 0.2])
    shape = tuple(int(v) for v in idx.max(axis=0) + 1)
    table = wf_model.level_cache(0.3).table(6)
    lf = kernels.log_factorials(6)
    a = np.zeros(int(np.prod(shape)))
    b = np.zeros_like(a)
    compiled.pushforward_sparse(idx, lw, table, lf, shape, a)
    _kernels_py.pushforward_sparse(idx, lw, table, lf, shape, b)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("rule", ["off", "fixed_number:3", "fixed_mass:0.95", "fixed_threshold:1e-3"])
def test_fused_filter_backends_agree(cir_model, cir_series, rule):
    r = PruneRule.parse(rule)
    out = {}
    for name in ("python", "compiled"):
        kernels.use_backend(name)
        out[name] = kernels.cir_filter_log_marginals(
            cir_series.times, cir_series.counts, cir_model.shape0, cir_model.theta0,
            cir_model.params.gamma, cir_model.params.lam, r.kind, r.value, r.relative)[0]
    kernels.use_backend("compiled")
    np.testing.assert_allclose(out["python"], out["compiled"], rtol=1e-12)


def test_backward_step_backends_draw_identical_samples(cir_model, cir_series):
    fo = cir_filter_compact(cir_series, cir_model)
    x_next = np.array([3.0, 8.0, 15.0, 0.4])
    dt = float(cir_series.times[-1] - cir_series.times[-2])
    draws = {}
    for name in ("python", "compiled"):
        kernels.use_backend(name)
        draws[name] = cir_backward_step(x_next, fo.filtering[-2], fo.predictive[-1], dt, cir_model,
                                        np.random.default_rng(4))
    kernels.use_backend("compiled")
    np.testing.assert_allclose(draws["python"], draws["compiled"], rtol=1e-12)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
