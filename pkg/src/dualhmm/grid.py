"""Index sets on the nonnegative integer grid and log-domain weight algebra.

An index set is stored as a two-dimensional ``int64`` array of shape
``(n, K)`` whose rows are distinct and sorted lexicographically.  Weight maps
are plain float arrays aligned with the rows of an index set.
"""

from __future__ import annotations

import numpy as np


def as_index_set(points, dim: int | None = None) -> np.ndarray:
    """Validate points and return them as a sorted, duplicate-free index set.

    Parameters
    ----------
    points : array_like
        Sequence of grid points. One-dimensional input is read as a list of
        scalar (K = 1) points.
    dim : int, optional
        Expected dimension K.

    Returns
    -------
    ndarray of shape (n, K), dtype int64
    """
    arr = np.asarray(points)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"index set must have shape (n, K), got {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("grid coordinates must be integers")
    arr = arr.astype(np.int64)
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected K={dim}, got K={arr.shape[1]}")
    if np.any(arr < 0):
        raise ValueError("grid coordinates must be nonnegative")
    if arr.shape[0] == 0:
        return arr
    return np.unique(arr, axis=0)


def lex_order(idx: np.ndarray) -> np.ndarray:
    """Permutation sorting the rows of ``idx`` lexicographically."""
    return np.lexsort(idx.T[::-1])


def norms(idx: np.ndarray) -> np.ndarray:
    """Total level ``|m|`` of every row."""
    return idx.sum(axis=1)


def box_shape(idx: np.ndarray) -> tuple:
    """Shape of the smallest dense box ``[0, max_j]`` containing every row."""
    return tuple(int(v) + 1 for v in idx.max(axis=0))


def below_mask(idx: np.ndarray, shape: tuple | None = None) -> np.ndarray:
    """Boolean dense array marking every point lying below some row of ``idx``."""
    if shape is None:
        shape = box_shape(idx)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(idx.T)] = True
    # a suffix "or" along every axis marks n whenever some m >= n is present
    for ax in range(mask.ndim):
        mask = np.flip(np.logical_or.accumulate(np.flip(mask, ax), axis=ax), ax)
    return mask


def below(lam) -> np.ndarray:
    """Down-set ``{n : n <= m for some m in lam}`` in lexicographic order."""
    idx = as_index_set(lam)
    if idx.shape[0] == 0:
        raise ValueError("below() needs a nonempty index set")
    return np.argwhere(below_mask(idx)).astype(np.int64)


def shift(lam, y) -> np.ndarray:
    """Translate every member of ``lam`` by the grid point ``y``."""
    idx = np.asarray(lam, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx.reshape(-1, 1)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (idx.shape[1],):
        raise ValueError(f"dimension mismatch: shift of K={idx.shape[1]} set by {y.shape}")
    if np.any(y < 0):
        raise ValueError("shift must be nonnegative")
    return idx + y


def logsumexp(a, axis=None):
    """``log(sum(exp(a)))`` along ``axis``; ``-inf`` where every entry is ``-inf``.

    A lean replacement for :func:`scipy.special.logsumexp` on real arrays,
    whose dispatch overhead dominates the many small reductions of the
    recursions.
    """
    a = np.asarray(a, dtype=float)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def logsumexp_normalize(log_w) -> tuple[np.ndarray, float]:
    """Normalize log-weights so that they sum to one.

    Returns
    -------
    normalized : ndarray
        ``log_w - log_total``.
    log_total : float
        Log of the pre-normalization total.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0:
        raise ValueError("cannot normalize an empty weight vector")
    total = logsumexp(log_w)
    # the total is nan for nan entries, +inf for +inf entries, -inf if all vanish
    if not np.isfinite(total):
        raise ValueError(f"cannot normalize log-weights with total {total}")
    return log_w - total, total


def merge_log_weights(idx: np.ndarray, log_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse duplicate rows of ``idx`` by log-sum-exp of their weights.

    Returns the unique rows in lexicographic order together with the merged
    log-weights.
    """
    uniq, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    top = np.max(log_w)
    if not np.isfinite(top):
        return uniq, np.full(uniq.shape[0], -np.inf)
    acc = np.bincount(inv, weights=np.exp(log_w - top), minlength=uniq.shape[0])
    with np.errstate(divide="ignore"):
        return uniq, np.log(acc) + top
