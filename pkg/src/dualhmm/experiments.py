"""Desk-scale comparisons: support growth, likelihood accuracy against runtime, smoothing L2.

Each function returns plain row dictionaries that the command-line front end
writes as CSV and the acceptance tests inspect directly.
"""

from __future__ import annotations

import time

import numpy as np

from .inference import PruneRule, loglik, run_filter, run_smoother
from .metrics import GammaMixture, l2_distance, likelihood_rmse
from .model import ObservationSeries
from .particle import bootstrap_pf, ffbs_particle_smoother, gamma_kde

LIKELIHOOD_STRATEGIES = (
    "fixed_mass:0.95", "fixed_mass:0.99", "fixed_mass:0.999",
    "fixed_number:10", "fixed_number:50", "fixed_number:200",
    "fixed_threshold:1e-2", "fixed_threshold:1e-3", "fixed_threshold:1e-4",
)


def _timed(fn, repeats: int):
    """Result of ``fn()`` and the median wall time over ``repeats`` calls."""
    ts = []
    out = None
    for _ in range(max(1, int(repeats))):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return out, float(np.median(ts))


# ---------------------------------------------------------- support growth


def support_formula(series: ObservationSeries) -> np.ndarray:
    """``prod_k (1 + sum_{j<i} y_{j,k})`` for every observation time ``i``."""
    tot = series.totals()
    past = np.vstack([np.zeros((1, tot.shape[1]), dtype=np.int64), np.cumsum(tot, axis=0)[:-1]])
    return np.prod(1 + past, axis=1)


def mass_count(weights, rho: float) -> int:
    """Smallest number of components carrying at least fraction ``rho`` of the mass."""
    w = np.sort(np.asarray(weights, dtype=float))[::-1]
    if rho >= 1.0:
        return int(np.count_nonzero(w))
    c = np.cumsum(w) / w.sum()
    return int(min(np.searchsorted(c, rho, side="left") + 1, w.size))


def support_table(series: ObservationSeries, model, levels=(0.95, 0.99, 0.999)) -> list:
    """Per-time support sizes of the exact filter and the counts covering each mass level."""
    if not levels:
        raise ValueError("need at least one mass level")
    fo = run_filter(series, model, PruneRule.off())
    formula = support_formula(series)
    rows = []
    for i, (pred, filt) in enumerate(zip(fo.predictive, fo.filtering)):
        row = {"time": float(series.times[i]), "support": len(pred), "formula": int(formula[i])}
        for rho in levels:
            row[f"mass_{rho:g}"] = mass_count(filt.weights, rho)
        rows.append(row)
    return rows


# ---------------------------------------------------- likelihood accuracy


def likelihood_table(series: ObservationSeries, model, strategies=LIKELIHOOD_STRATEGIES,
                     pf_particles=(1000, 5000, 7500, 10000), replicates: int = 50, rng=None,
                     repeats: int = 5, ess_frac: float = 0.5) -> list:
    """Accuracy and runtime of pruned likelihoods and bootstrap particle filters.

    Pruning rows report the absolute error against the exact value; particle
    filter rows report the RMSE over ``replicates`` runs.  Runtimes are
    medians per single likelihood estimate; ``relative_runtime`` divides by
    the exact computation time.
    """
    if not strategies and not pf_particles:
        raise ValueError("empty strategy list")
    rng = np.random.default_rng() if rng is None else rng
    exact, t_exact = _timed(lambda: loglik(series, model, PruneRule.off()), repeats)
    rows = [{"method": "exact", "setting": "off", "loglik": exact, "error": 0.0,
             "runtime": t_exact, "relative_runtime": 1.0}]
    for s in strategies:
        rule = PruneRule.parse(s)
        v, t = _timed(lambda: loglik(series, model, rule), repeats)
        rows.append({"method": "prune", "setting": str(rule), "loglik": v, "error": abs(v - exact),
                     "runtime": t, "relative_runtime": t / t_exact})
    for n in pf_particles:
        est, ts = [], []
        for _ in range(int(replicates)):
            t0 = time.perf_counter()
            est.append(bootstrap_pf(series, model, int(n), rng, ess_frac).loglik)
            ts.append(time.perf_counter() - t0)
        t = float(np.median(ts))
        rows.append({"method": "pf", "setting": str(int(n)), "loglik": float(np.mean(est)),
                     "error": likelihood_rmse(est, exact), "runtime": t, "relative_runtime": t / t_exact})
    return rows


def pareto_dominates(rows, baseline: str = "pf", challenger: str = "prune") -> list:
    """``(challenger, baseline, dominated)`` for every pair of rows.

    A challenger dominates a baseline point when both its error and its
    runtime are strictly lower.
    """
    ch = [r for r in rows if r["method"] == challenger]
    bl = [r for r in rows if r["method"] == baseline]
    return [(c["setting"], b["setting"], bool(c["error"] < b["error"] and c["runtime"] < b["runtime"]))
            for c in ch for b in bl]


# -------------------------------------------------------- smoothing accuracy


def smoothing_table(series: ObservationSeries, model, strategies=("fixed_number:10", "fixed_number:50",
                                                                  "fixed_mass:0.95", "fixed_mass:0.99",
                                                                  "fixed_mass:0.999"),
                    pf_particles=(50, 100, 500), rng=None, repeats: int = 1, ess_frac: float = 0.5,
                    bandwidth: float | None = None) -> list:
    """Maximum over time of the L2 distance to the exact CIR smoothing distributions.

    Particle smoothing clouds are turned into gamma kernel density estimates,
    one kernel per particle weighted by its smoothing weight, before
    comparison.
    """
    if model.family != "cir":
        raise NotImplementedError("smoothing comparisons need the CIR transition density")
    if not strategies and not pf_particles:
        raise ValueError("empty strategy list")
    rng = np.random.default_rng() if rng is None else rng
    exact, t_exact = _timed(lambda: run_smoother(series, model, PruneRule.off()), repeats)
    ref = [GammaMixture.from_weighted(m, model) for m in exact]
    rows = [{"method": "exact", "setting": "off", "max_l2": 0.0, "runtime": t_exact, "relative_runtime": 1.0}]
    for s in strategies:
        rule = PruneRule.parse(s)
        sm, t = _timed(lambda: run_smoother(series, model, rule), repeats)
        d = max(l2_distance(g, GammaMixture.from_weighted(h, model)) for g, h in zip(ref, sm))
        rows.append({"method": "prune", "setting": str(rule), "max_l2": d, "runtime": t,
                     "relative_runtime": t / t_exact})
    for n in pf_particles:
        t0 = time.perf_counter()
        clouds = ffbs_particle_smoother(series, model, int(n), rng, ess_frac)
        t = time.perf_counter() - t0
        d = max(l2_distance(g, gamma_kde(c.states.ravel(), bandwidth, c.weights))
                for g, c in zip(ref, clouds))
        rows.append({"method": "pf", "setting": str(int(n)), "max_l2": d, "runtime": t,
                     "relative_runtime": t / t_exact})
    return rows
