"""Backend selection and the dual pushforward used by the prediction step.

The compiled extension :mod:`dualhmm._kernels` is used when it imports;
otherwise, or when the environment variable ``DUALHMM_PURE_PYTHON`` is set to
a non-empty value other than ``0``, the numpy versions in
:mod:`dualhmm._kernels_py` are used.  Both produce the same numbers up to
floating-point rounding.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import gammaln

from . import _kernels_py
from .grid import below_mask, box_shape


def _load_backend():
    if os.environ.get("DUALHMM_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "compiled"


_backend, BACKEND = _load_backend()

_LF = gammaln(np.arange(1025) + 1.0)


def log_factorials(n: int) -> np.ndarray:
    """Table of ``log(k!)`` for ``k = 0..n`` (at least)."""
    global _LF
    if n >= _LF.shape[0]:
        size = max(n + 1, 2 * _LF.shape[0])
        _LF = gammaln(np.arange(size) + 1.0)
    return _LF


def use_backend(name: str) -> None:
    """Switch between ``"compiled"`` and ``"python"`` kernels at run time."""
    global _backend, BACKEND
    if name == "python":
        _backend, BACKEND = _kernels_py, "python"
    elif name == "compiled":
        from . import _kernels
        _backend, BACKEND = _kernels, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")


def _dense_levels(indices, shifted, level, shape):
    """Pushforward by the multinomial convolution recursion on a dense box.

    With ``v_m = w_m K^|m| / multinom(m)`` the sums
    ``Q_D(n) = sum_{|d|=D} v_{n+d} multinom(d) K^-D`` obey
    ``Q_D = (1/K) sum_j Q_{D-1}(. + e_j)``, and the predicted weight is
    ``multinom(n) K^-|n| sum_D P(|n|+D -> |n|) Q_D(n)``.
    """
    K = indices.shape[1]
    M = indices.sum(axis=1)
    Mmax = int(M.max())
    lf = log_factorials(Mmax)
    logv = shifted + M * np.log(K) - lf[M] + lf[indices].sum(axis=1)
    vmax = np.max(logv)
    Q = np.zeros(shape)
    Q[tuple(indices.T)] = np.exp(logv - vmax)
    grids = np.indices(shape)
    Ngrid = grids.sum(axis=0)
    log_mult = lf[Ngrid] - lf[grids].sum(axis=0) - Ngrid * np.log(K)
    acc = np.zeros(shape)
    valid = Ngrid <= Mmax
    for D in range(Mmax + 1):
        if D > 0:
            nxt = np.zeros(shape)
            for j in range(K):
                src = [slice(None)] * K
                dst = [slice(None)] * K
                src[j] = slice(1, None)
                dst[j] = slice(0, -1)
                nxt[tuple(dst)] += Q[tuple(src)]
            Q = nxt / K
        tgt = Ngrid + D
        ok = valid & (tgt <= Mmax)
        if not ok.any():
            break
        lp = np.full(shape, -np.inf)
        lp[ok] = level[tgt[ok], Ngrid[ok]]
        acc += Q * np.exp(lp)
    with np.errstate(divide="ignore"):
        return np.log(acc) + log_mult + vmax


def pushforward(indices: np.ndarray, log_w: np.ndarray, level=None, survive_prob=None,
                method: str = "auto"):
    """Push weights through the death dual: ``w'_n = sum_{m >= n} w_m p_{m,n}``.

    Parameters
    ----------
    indices : ndarray (n, K)
        Source index set.
    log_w : ndarray (n,)
        Source log-weights (any scale; linear in the weights).
    level : ndarray, optional
        Square table ``log P(M -> N)`` covering every source level.
    survive_prob : float, optional
        For ``K = 1`` binomial thinning, the per-individual survival
        probability (used instead of ``level``).
    method : {"auto", "sparse", "dense"}
        Evaluation strategy for the level-table path.

    Returns
    -------
    target : ndarray
        The down-set of ``indices`` in lexicographic order.
    log_w_new : ndarray
        Pushed-forward log-weights (``-inf`` where they underflow).
    """
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ValueError("pushforward of an all-zero weight vector")
    shifted = np.ascontiguousarray(log_w - top)
    shape = box_shape(indices)
    mask = below_mask(indices, shape)
    if survive_prob is not None:
        if indices.shape[1] != 1:
            raise ValueError("binomial pushforward needs K = 1")
        out = np.zeros(shape[0])
        _backend.pushforward_binomial(np.ascontiguousarray(indices[:, 0]), shifted,
                                      float(survive_prob), log_factorials(shape[0]), out)
        with np.errstate(divide="ignore"):
            dense_log = np.log(out)
    else:
        if level is None:
            raise ValueError("need either a level table or a survival probability")
        level = np.ascontiguousarray(level, dtype=float)
        K = indices.shape[1]
        if method == "auto":
            pairs = float(np.prod(indices + 1, axis=1).sum())
            dense_cost = float(np.prod(shape)) * (K + 4) * (int(indices.sum(axis=1).max()) + 1)
            factor = 3.0 if BACKEND == "compiled" else 30.0
            method = "dense" if (K > 1 and dense_cost < factor * pairs) else "sparse"
        if method == "dense":
            dense_log = _dense_levels(indices, shifted, level, shape)
        else:
            out = np.zeros(int(np.prod(shape)))
            Mmax = int(indices.sum(axis=1).max())
            _backend.pushforward_sparse(indices, shifted, level, log_factorials(Mmax), shape, out)
            with np.errstate(divide="ignore"):
                dense_log = np.log(out.reshape(shape))
    target = np.argwhere(mask).astype(np.int64)
    return target, dense_log[mask] + top


_RULE_CODES = {"off": 0, "number": 1, "mass": 2, "threshold": 3}


def cir_filter_log_marginals(times, counts, shape0: float, theta0: float, gamma: float, lam: float,
                             rule_kind: str = "off", rule_value: float | None = None,
                             relative: bool = False, record: tuple | None = None) -> tuple[np.ndarray, int]:
    """Per-time log predictive probabilities of a CIR/Poisson series.

    Runs the whole filter (update, pruning, binomial-thinning prediction)
    in one backend call without building mixture objects.  ``counts`` is a
    sequence of per-time 1-d (or ``(n_i, 1)``) count arrays.  Returns the
    log marginals and the number of threshold steps that would have removed
    every component.  ``record = (pred, filt)`` collects ``(lo, log_weights,
    theta)`` windows of every predictive and filtering mixture.
    """
    times = np.ascontiguousarray(times, dtype=float)
    flat = [np.asarray(c, dtype=np.int64).reshape(-1) for c in counts]
    offsets = np.zeros(len(flat) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([c.size for c in flat])
    allc = np.ascontiguousarray(np.concatenate(flat) if flat else np.zeros(0, dtype=np.int64))
    out = np.empty(times.shape[0])
    warned = _backend.cir_filter_loglik(times, offsets, allc, float(shape0), float(theta0), float(gamma),
                                        float(lam), _RULE_CODES[rule_kind],
                                        float(rule_value or 0.0), bool(relative), out,
                                        *(record if record is not None else (None, None)))
    return out, int(warned)


def backend():
    """The active kernel module."""
    return _backend
