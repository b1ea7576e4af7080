"""Transition probabilities of pure-death dual processes on the integer grid.

The probability that a death process on levels ``0, 1, 2, ...`` moves from
level ``M`` to level ``M - d`` in time ``t`` is the alternating sum

    P(M -> M-d) = gamma_d * (-1)^d * sum_k exp(-lam_{M-k} R) / prod_{h != k} (lam_{M-k} - lam_{M-h})

with ``gamma_d = prod_{h<d} lam_{M-h}`` and ``R`` the integrated time change.
The terms cancel catastrophically, so the sums are evaluated with gmpy2 at a
configurable precision and the row is accepted only if it sums to one within
a tolerance.  Which coordinates die, given the total drop, follows a
multivariate hypergeometric law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import gmpy2
import numpy as np
from scipy.special import gammaln

from .grid import below, as_index_set

DEFAULT_PRECISION_BITS = 512
DEFAULT_PRECISION_MAX_BITS = 4096
DEFAULT_ROW_SUM_TOL = 1e-10


class PrecisionError(ArithmeticError):
    """Raised when extended precision is insufficient to resolve a row."""


@dataclass(frozen=True)
class DeathRateSpec:
    """Level death intensities and time change of a pure-death dual.

    Parameters
    ----------
    lambda_n : callable
        Maps an integer level ``n`` to the total death intensity at that
        level.  It may use gmpy2 arithmetic so that rates are exact at the
        working precision; ``lambda_n(0)`` must be zero.
    rho_integral : callable
        ``rho_integral(t, theta)`` returns the integrated time change; ``t``
        itself when the rates are time-homogeneous.
    key : tuple
        Hashable identity used by caches.
    """

    lambda_n: Callable[[int], object]
    rho_integral: Callable[[float, object], float] = field(default=lambda t, theta: t)
    key: tuple = ()


def wf_death_rates(total_alpha: float) -> DeathRateSpec:
    """Death rates ``n(|alpha| + n - 1)/2`` of the Wright-Fisher dual."""
    total_alpha = float(total_alpha)
    if total_alpha <= 0:
        raise ValueError("total mutation rate must be positive")

    def lam(n):
        return n * (gmpy2.mpfr(total_alpha) + n - 1) / 2

    return DeathRateSpec(lambda_n=lam, key=("wf", total_alpha))


def _level_row(M: int, R, spec: DeathRateSpec, upto: int | None = None) -> tuple[list, list]:
    """High-precision ``P(M -> M-d)`` for ``d = 0..upto`` (current gmpy2 context).

    Also returns, for every ``d``, the sum of absolute term magnitudes, which
    bounds the rounding error of the alternating sum.
    """
    if upto is None:
        upto = M
    lam = [gmpy2.mpfr(spec.lambda_n(M - k)) for k in range(upto + 1)]
    R = gmpy2.mpfr(R)
    E = [gmpy2.exp(-lk * R) for lk in lam]
    D = []
    out = []
    mag = []
    gam = gmpy2.mpfr(1)
    for d in range(upto + 1):
        ld = lam[d]
        for k in range(d):
            diff = lam[k] - ld
            if diff == 0:
                raise ZeroDivisionError(f"repeated death rates at levels {M - k} and {M - d}")
            D[k] *= diff
        dd = gmpy2.mpfr(1)
        for h in range(d):
            dd *= ld - lam[h]
        D.append(dd)
        s = gmpy2.mpfr(0)
        a = gmpy2.mpfr(0)
        for k in range(d + 1):
            term = E[k] / D[k]
            s += term
            a += abs(term)
        out.append(gam * (s if d % 2 == 0 else -s))
        mag.append(gam * a)
        gam *= ld
    return out, mag


def level_coefficient(total_m: int, drop: int, t: float, spec: DeathRateSpec, theta=None,
                      precision_bits: int = DEFAULT_PRECISION_BITS) -> float:
    """Alternating-sum coefficient ``C_{M, M-d}(t)`` rounded to double.

    The value is the level transition probability divided by the product of
    the ``d`` top death rates.  No residual check is applied here; use
    :func:`level_log_probs` for a checked row.
    """
    if not 0 <= drop <= total_m:
        raise ValueError("need 0 <= drop <= total_m")
    if t <= 0:
        raise ValueError("elapsed time must be positive")
    R = spec.rho_integral(t, theta)
    with gmpy2.context(precision=int(precision_bits)):
        row, _ = _level_row(total_m, R, spec, upto=drop)
        gam = gmpy2.mpfr(1)
        for h in range(drop):
            gam *= gmpy2.mpfr(spec.lambda_n(total_m - h))
        return float(row[drop] / gam)


def level_log_probs(total_m: int, t: float, spec: DeathRateSpec, theta=None,
                    precision_bits: int = DEFAULT_PRECISION_BITS,
                    precision_max_bits: int = DEFAULT_PRECISION_MAX_BITS,
                    row_sum_tol: float = DEFAULT_ROW_SUM_TOL) -> np.ndarray:
    """Log probabilities ``log P(M -> N)`` for ``N = 0..M``.

    The row is recomputed at doubled precision until it sums to one within
    ``row_sum_tol`` and the rounding error bound of every entry is below
    ``1e-3 * row_sum_tol``.  Entries that are not positive at that precision
    are smaller than the error bound and are returned as ``-inf``.

    Raises
    ------
    PrecisionError
        If ``precision_max_bits`` is reached without passing the check.
    """
    if t <= 0:
        raise ValueError("elapsed time must be positive")
    if total_m == 0:
        return np.zeros(1)
    R = spec.rho_integral(t, theta)
    bits = int(precision_bits)
    while True:
        with gmpy2.context(precision=bits):
            row, mag = _level_row(total_m, R, spec)
            total = gmpy2.fsum(row)
            unit = gmpy2.mpfr(2) ** (8 - bits)
            noise = max(mg for mg in mag) * unit
            ok = abs(total - 1) <= row_sum_tol and noise <= 1e-3 * row_sum_tol
            if ok:
                # index by target level N = M - d
                return np.array([float(gmpy2.log(p)) if p > 0 else -np.inf
                                 for p in reversed(row)])
        if bits >= precision_max_bits:
            raise PrecisionError(
                f"level {total_m} row at t={t}: residual {float(total - 1):.3e} "
                f"not within {row_sum_tol} at {bits} bits")
        bits = min(2 * bits, int(precision_max_bits))


class FactorCache:
    """Lazily grown table of level transition log-probabilities for fixed ``(t, theta)``.

    Row ``M`` holds ``log P(M -> N)`` for ``N = 0..M``; a cache built up to
    ``max_level`` stores ``(max_level + 1)(max_level + 2)/2`` numbers.
    """

    def __init__(self, t: float, spec: DeathRateSpec, theta=None, max_level: int = 0,
                 precision_bits: int = DEFAULT_PRECISION_BITS,
                 precision_max_bits: int = DEFAULT_PRECISION_MAX_BITS,
                 row_sum_tol: float = DEFAULT_ROW_SUM_TOL,
                 max_entries: int = 50_000_000):
        if max_level < 0:
            raise ValueError("max_level must be nonnegative")
        self.t = float(t)
        self.spec = spec
        self.theta = theta
        self.precision_bits = precision_bits
        self.precision_max_bits = precision_max_bits
        self.row_sum_tol = row_sum_tol
        self.max_entries = max_entries
        self._table = np.full((1, 1), 0.0)
        self._levels = 0  # rows 0..self._levels-1 are filled
        self._table[0, 0] = 0.0
        self._levels = 1
        self.ensure(max_level)

    @property
    def key(self) -> tuple:
        return (self.t, self.theta, self.spec.key)

    @property
    def max_level(self) -> int:
        return self._levels - 1

    @property
    def size(self) -> int:
        """Number of stored coefficients."""
        n = self._levels
        return n * (n + 1) // 2

    def ensure(self, level: int) -> None:
        """Make sure rows up to ``level`` are available."""
        if level < self._levels:
            return
        n_new = level + 1
        if n_new * (n_new + 1) // 2 > self.max_entries:
            raise MemoryError(f"factor cache for level {level} exceeds {self.max_entries} entries")
        cap = self._table.shape[0]
        if n_new > cap:
            cap = max(n_new, 2 * cap)
            grown = np.full((cap, cap), -np.inf)
            grown[: self._levels, : self._levels] = self._table[: self._levels, : self._levels]
            self._table = grown
        for M in range(self._levels, n_new):
            self._table[M, : M + 1] = level_log_probs(
                M, self.t, self.spec, self.theta, self.precision_bits,
                self.precision_max_bits, self.row_sum_tol)
        self._levels = n_new

    def row(self, level: int) -> np.ndarray:
        self.ensure(level)
        return self._table[level, : level + 1].copy()

    def table(self, level: int) -> np.ndarray:
        """View of the square table ``[M, N]`` for ``M, N <= level`` (``-inf`` above the diagonal)."""
        self.ensure(level)
        return self._table[: level + 1, : level + 1]


def factor_cache(max_level: int, t: float, spec: DeathRateSpec, theta=None, **kwargs) -> FactorCache:
    """Build a :class:`FactorCache` holding all levels up to ``max_level``."""
    return FactorCache(t, spec, theta, max_level=max_level, **kwargs)


@dataclass(frozen=True)
class TransitionRow:
    """Distribution of the dual after time ``elapsed`` started from ``source``.

    ``indices`` lists every grid point below ``source`` (lexicographic) and
    ``log_probs`` the matching log-probabilities.
    """

    source: tuple
    elapsed: float
    indices: np.ndarray
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in i): float(p) for i, p in zip(self.indices, self.probs)}


def log_comb(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def log_mvh(drop_vec: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Multivariate hypergeometric log-pmf of removing ``drop_vec`` from ``m``."""
    drop_vec = np.atleast_2d(drop_vec)
    total = drop_vec.sum(axis=1)
    return log_comb(m[None, :], drop_vec).sum(axis=1) - log_comb(m.sum(), total)


def transition_row(m, t: float, spec: DeathRateSpec, theta=None, cache: FactorCache | None = None,
                   **precision) -> TransitionRow:
    """Full transition row of the multi-type death process from ``m``."""
    m = np.atleast_1d(np.asarray(m, dtype=np.int64))
    if t <= 0:
        raise ValueError("elapsed time must be positive")
    M = int(m.sum())
    if cache is not None:
        if cache.t != float(t) or cache.spec.key != spec.key or cache.theta != theta:
            raise ValueError("cache built for a different (t, theta, spec)")
        level = cache.row(M)
    else:
        level = level_log_probs(M, t, spec, theta, **precision)
    idx = below(m[None, :])
    N = idx.sum(axis=1)
    logp = level[N] + log_mvh(m[None, :] - idx, m)
    return TransitionRow(tuple(int(v) for v in m), float(t), idx, logp)


def binomial_row(m: int, survive_prob: float, elapsed: float = float("nan")) -> TransitionRow:
    """Row of the one-dimensional death process with independent survival."""
    if not 0.0 < survive_prob < 1.0:
        raise ValueError("survive_prob must lie in (0, 1)")
    m = int(m)
    n = np.arange(m + 1)
    logp = log_comb(m, n) + n * np.log(survive_prob) + (m - n) * np.log1p(-survive_prob)
    return TransitionRow((m,), float(elapsed), as_index_set(n), logp)
