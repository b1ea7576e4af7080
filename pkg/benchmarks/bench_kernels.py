"""Compiled kernels against their numpy fallbacks.

Usage: ``python benchmarks/bench_kernels.py [--repeats N]``.  Prints the
median wall time of each kernel under both backends and the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dualhmm import _kernels_py, datasets, kernels
from dualhmm.inference import PruneRule, cir_filter_compact
from dualhmm.wf import WfModel, WfParams


def median_time(fn, repeats: int) -> float:
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def cases():
    rng = np.random.default_rng(0)
    src = np.sort(rng.choice(4000, 600, replace=False)).astype(np.int64)
    lw = -np.abs(rng.normal(size=600)) * 5
    lf = kernels.log_factorials(4000)
    yield "pushforward_binomial (600 of 4000)", lambda mod: mod.pushforward_binomial(src, lw, 0.4, lf, np.zeros(4000))

    wf = WfModel(WfParams((1.1, 2.5, 2.1)))
    idx = np.array([m for m in np.ndindex(13, 13, 13) if sum(m) <= 12 and sum(m) % 3 == 0], dtype=np.int64)
    wlw = -rng.random(idx.shape[0])
    table = wf.level_cache(0.1).table(12)
    lf12 = kernels.log_factorials(12)
    shape = (13, 13, 13)
    yield (f"pushforward_sparse ({idx.shape[0]} sources, K=3)",
           lambda mod: mod.pushforward_sparse(idx, wlw, table, lf12, shape, np.zeros(13 ** 3)))

    ds = datasets.load("cir_desk")
    m = ds.model
    flat = [np.asarray(c).reshape(-1) for c in ds.series.counts]
    offsets = np.concatenate([[0], np.cumsum([c.size for c in flat])]).astype(np.int64)
    allc = np.concatenate(flat).astype(np.int64)
    out = np.empty(len(ds.series))
    for kind, value in (("off", 0.0), ("number", 10.0)):
        yield (f"cir_filter_loglik (cir_desk, {kind})",
               lambda mod, k=kind, v=value: mod.cir_filter_loglik(
                   ds.series.times, offsets, allc, m.shape0, m.theta0, m.params.gamma, m.params.lam,
                   kernels._RULE_CODES[k], v, False, out))

    fo = cir_filter_compact(ds.series, m, PruneRule.off())
    i = len(ds.series) - 2
    filt, pred = fo.filtering[i], fo.predictive[i + 1]
    dt = float(ds.series.times[i + 1] - ds.series.times[i])
    tp = m.theta0 / np.expm1(2 * m.params.gamma * dt)
    rate = m.theta0 / -np.expm1(-2 * m.params.gamma * dt)
    x_next = rng.gamma(10.0, 1.0, size=2000)
    pr = m.shape0 + pred.indices[:, 0].astype(float)

    def backward(mod):
        u = np.random.default_rng(1).random(x_next.size)
        mod.cir_backward_indices(x_next, u, pr, np.ascontiguousarray(pred.log_weights), float(pred.theta),
                                 m.shape0 + filt.indices[:, 0].astype(float),
                                 np.ascontiguousarray(filt.log_weights), float(filt.theta),
                                 tp, rate, float(m.shape0), 100000)
    yield "cir_backward_indices (2000 draws, largest filter)", backward


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        from dualhmm import _kernels
    except ImportError:
        print("compiled kernels are not built; nothing to compare")
        return 1
    print(f"{'kernel':52s} {'compiled':>11s} {'python':>11s} {'speed-up':>9s}")
    for name, fn in cases():
        tc = median_time(lambda: fn(_kernels), args.repeats)
        tp = median_time(lambda: fn(_kernels_py), args.repeats)
        print(f"{name:52s} {tc * 1e3:9.2f}ms {tp * 1e3:9.2f}ms {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
