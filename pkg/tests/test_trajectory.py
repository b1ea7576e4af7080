import numpy as np
import pytest

from dualhmm.inference import PruneRule, cost_to_go_recursion, run_filter, run_smoother
from dualhmm.model import mixture_mean
from dualhmm.trajectory import cir_backward_step, sample_joint_cir, sample_joint_wf


def test_cir_trajectories_match_smoothing_means(cir_model, cir_series):
    out = run_smoother(cir_series, cir_model, PruneRule.off(), return_parts=True)
    ts = sample_joint_cir(out.filter, cir_model, 20000, np.random.default_rng(8))
    for i, sm in enumerate(out.smoothing):
        x = ts.states[:, i, 0]
        assert abs(x.mean() - mixture_mean(sm, cir_model)[0]) < 4 * x.std() / np.sqrt(x.size)


def test_wf_trajectories_match_smoothing_means(wf_model, wf_series):
    out = run_smoother(wf_series, wf_model, PruneRule.off(), return_parts=True)
    ts = sample_joint_wf(wf_series, wf_model, out.cost_to_go, np.random.default_rng(9), 4000)
    assert np.allclose(ts.states.sum(axis=2), 1.0)
    for i, sm in enumerate(out.smoothing):
        x = ts.states[:, i, :]
        np.testing.assert_array_less(np.abs(x.mean(0) - mixture_mean(sm, wf_model)), 4 * x.std(0) / np.sqrt(4000))


def test_backward_step_rejects_nonpositive_states(cir_model, cir_series):
    fo = run_filter(cir_series, cir_model)
    with pytest.raises(ValueError):
        cir_backward_step(np.array([0.0]), fo.filtering[0], fo.predictive[1], 0.4, cir_model,
                          np.random.default_rng(0))


def test_trajectory_rows_and_reproducibility(cir_model, cir_series):
    fo = run_filter(cir_series, cir_model)
    a = sample_joint_cir(fo, cir_model, 3, np.random.default_rng(1))
    b = sample_joint_cir(fo, cir_model, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(a.states, b.states)
    rows = list(a.to_rows())
    assert len(rows) == 3 * len(cir_series) and rows[0][:2] == [0, 0.0]


def test_wf_needs_one_cost_to_go_per_time(wf_model, wf_series):
    ctgs = cost_to_go_recursion(wf_series, wf_model)
    with pytest.raises(ValueError):
        sample_joint_wf(wf_series, wf_model, ctgs[:-1], np.random.default_rng(0))
