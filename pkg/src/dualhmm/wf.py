"""K-type Wright-Fisher signal observed through multinomial counts.

The stationary law is ``Dir(alpha)``; filtering components are
``Dir(alpha + m)`` and the dual is a pure-death process on ``Z_+^K`` with
level rates ``n(|alpha| + n - 1)/2``.  Exact simulation of the transition and
of the data-conditioned forward kernel uses the alternating-series
representation of the ancestral-lineage count distribution.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations

import gmpy2
import numpy as np
from scipy.special import gammaln, xlogy

from .grid import logsumexp
from . import kernels
from .death import FactorCache, TransitionRow, transition_row, wf_death_rates
from .model import CostToGo, ModelContract

DEFAULT_MIN_DT = 0.05
DEFAULT_MAX_REFINE = 10**6


def time_key(dt) -> float:
    """Elapsed time rounded to 12 significant digits.

    Differences of observation times carry rounding noise (``0.3 - 0.2``
    is not ``0.1``); the caches treat such values as one elapsed time.
    """
    return float(f"{float(dt):.12g}")


class UnsupportedRegimeError(ValueError):
    """Raised for time steps below the supported minimum of the series sampler."""


@dataclass(frozen=True)
class WfParams:
    alpha: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.alpha)
        if len(a) < 2:
            raise ValueError("Wright-Fisher model needs K >= 2 types")
        if not all(np.isfinite(v) and v > 0 for v in a):
            raise ValueError(f"alpha entries must be positive, got {a}")
        object.__setattr__(self, "alpha", a)

    @property
    def total(self) -> float:
        return float(sum(self.alpha))

    def summary(self) -> dict:
        return {"alpha": list(self.alpha), "total": self.total}


def compositions(m: int, K: int) -> np.ndarray:
    """All ``l`` in ``Z_+^K`` with ``|l| = m``, lexicographic order."""
    if K == 1:
        return np.array([[m]], dtype=np.int64)
    out = []
    for bars in combinations(range(m + K - 1), K - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(m + K - 2 - prev)
        out.append(row)
    arr = np.array(out, dtype=np.int64)
    return arr[np.lexsort(arr.T[::-1])]


def log_multinomial_coef(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return gammaln(y.sum(axis=-1) + 1.0) - gammaln(y + 1.0).sum(axis=-1)


class AncestralSeries:
    """Alternating-series representation of the ancestral count law ``q_m(t)``.

    ``q_m = sum_{j >= 0} (-1)^j b_{m+j}(m)`` with
    ``b_i(m) = a_im exp(-i(i + theta - 1) t / 2)`` and
    ``a_im = (theta + 2i - 1) (theta + m)_(i-1) / (m! (i - m)!)``.
    Coefficients and partial sums are evaluated with gmpy2 and cached.
    """

    def __init__(self, t: float, theta: float, precision_bits: int = 512,
                 min_dt: float = DEFAULT_MIN_DT, max_refine: int = DEFAULT_MAX_REFINE):
        if t < min_dt:
            raise UnsupportedRegimeError(
                f"time step {t} is below the supported minimum {min_dt} of the series sampler")
        if theta <= 0:
            raise ValueError("theta must be positive")
        self.t = float(t)
        self.theta = float(theta)
        self.bits = int(precision_bits)
        self.max_refine = int(max_refine)
        self._partial: dict[int, list] = {}
        self._running: dict[int, object] = {}
        self._C: dict[int, int] = {}
        self.D0 = self._compute_D0()

    def _compute_D0(self) -> int:
        th, t = self.theta, self.t
        i = max(0, math.ceil(1.0 / t - (th + 1.0) / 2.0))
        while (th + 2 * i + 1) * math.exp(-(2 * i + th) * t / 2.0) >= 1.0:
            i += 1
        return i

    def coefficient(self, i: int, m: int):
        """``b_i(m)`` as a gmpy2 number (current precision)."""
        if i < m:
            raise ValueError("need i >= m")
        if i == 0:
            return gmpy2.mpfr(1)
        with gmpy2.context(precision=self.bits):
            th = gmpy2.mpfr(self.theta)
            la = (gmpy2.log(th + 2 * i - 1) + gmpy2.lgamma(th + m + i - 1)[0]
                  - gmpy2.lgamma(th + m)[0] - gmpy2.lgamma(m + 1)[0] - gmpy2.lgamma(i - m + 1)[0])
            return gmpy2.exp(la - i * (i + th - 1) * gmpy2.mpfr(self.t) / 2)

    def C(self, m: int) -> int:
        """First ``j`` after which ``b_{m+j}(m)`` decreases."""
        if m in self._C:
            return self._C[m]
        if m > self.D0:
            self._C[m] = 0
            return 0
        j = 0
        prev = self.coefficient(m, m)
        while True:
            nxt = self.coefficient(m + j + 1, m)
            if nxt < prev:
                break
            prev = nxt
            j += 1
        self._C[m] = j
        return j

    def partial(self, m: int, n: int) -> float:
        """``sum_{j=0}^{n} (-1)^j b_{m+j}(m)`` rounded to double."""
        tab = self._partial.setdefault(m, [])
        if n >= len(tab):
            with gmpy2.context(precision=self.bits):
                run = self._running.get(m, gmpy2.mpfr(0))
                for j in range(len(tab), n + 8):
                    b = self.coefficient(m + j, m)
                    run = run + b if j % 2 == 0 else run - b
                    tab.append(float(run))
                self._running[m] = run
        return tab[n]

    def sample(self, rng, weights=None, return_trace: bool = False):
        """Exact draw of ``m`` with probabilities ``r_m q_m``.

        Parameters
        ----------
        rng : numpy.random.Generator
        weights : callable, optional
            ``m -> r_m`` positive reweighting with ``sum_m r_m q_m = 1``.
            Unit weights when omitted.
        return_trace : bool
            Also return the list of ``(lower, upper)`` brackets visited.
        """
        U = rng.random()
        depth: list[int] = []
        r: list[float] = []
        trace = []
        refinements = 0
        m = 0
        while True:
            r.append(1.0 if weights is None else float(weights(m)))
            depth.append(math.ceil(self.C(m) / 2))
            while True:
                lo = 0.0
                hi = 0.0
                for j in range(m + 1):
                    lo += r[j] * self.partial(j, 2 * depth[j] + 1)
                    hi += r[j] * self.partial(j, 2 * depth[j])
                if return_trace:
                    trace.append((lo, hi))
                if lo > U:
                    return (m, trace) if return_trace else m
                if hi < U:
                    break
                depth = [d + 1 for d in depth]
                refinements += 1
                if refinements > self.max_refine:
                    raise RuntimeError("alternating-series brackets did not separate the uniform")
            m += 1
            if m > self.max_refine:
                raise RuntimeError("alternating-series sampler exceeded the maximal index")

    def sample_batch(self, rng, size: int, weights=None) -> np.ndarray:
        """Many draws at once, one uniform per draw.

        Every uniform is classified against the same bracket sequence as in
        :meth:`sample` with all depths refined together.  Refinement only
        tightens the brackets around the cumulative probabilities, so each
        outcome equals that of the sequential algorithm on the same uniform.

        Parameters
        ----------
        weights : callable, optional
            ``(m, active) -> r_m`` for the draws at positions ``active``
            (an array of the same length).  Unit weights when omitted.
        """
        U = rng.random(size)
        out = np.full(size, -1, dtype=np.int64)
        active = np.arange(size)
        depth: list[int] = []
        r: list[np.ndarray] = []
        refinements = 0
        m = 0
        while active.size:
            if weights is None:
                r.append(np.ones(active.size))
            else:
                r.append(np.asarray(weights(m, active), dtype=float))
            depth.append(math.ceil(self.C(m) / 2))
            u = U[active]
            while True:
                lo = np.zeros(active.size)
                hi = np.zeros(active.size)
                for j, d in enumerate(depth):
                    lo += r[j] * self.partial(j, 2 * d + 1)
                    hi += r[j] * self.partial(j, 2 * d)
                if not np.any((u > lo) & (u < hi)):
                    break
                depth = [d + 1 for d in depth]
                refinements += 1
                if refinements > self.max_refine:
                    raise RuntimeError("alternating-series brackets did not separate the uniforms")
            done = u <= lo
            out[active[done]] = m
            keep = ~done
            active = active[keep]
            r = [rj[keep] for rj in r]
            m += 1
            if m > self.max_refine:
                raise RuntimeError("alternating-series sampler exceeded the maximal index")
        return out


class WfModel(ModelContract):
    """Wright-Fisher/multinomial hidden Markov model."""

    family = "wf"

    def __init__(self, params: WfParams, min_dt: float = DEFAULT_MIN_DT,
                 max_refine: int = DEFAULT_MAX_REFINE, precision: dict | None = None):
        self.params = params
        self.alpha = np.array(params.alpha)
        self.total = params.total
        self.dim = len(params.alpha)
        self.min_dt = min_dt
        self.max_refine = max_refine
        self.precision = dict(precision or {})
        self.rates = wf_death_rates(self.total)
        self._caches: OrderedDict = OrderedDict()
        self._series: dict = {}

    def __repr__(self) -> str:
        return f"WfModel(alpha={self.params.alpha})"

    @property
    def theta0(self):
        return None

    # --------------------------------------------------------------- contract

    def log_pi_density(self, x):
        x = np.asarray(x, dtype=float)
        a = self.alpha
        return gammaln(self.total) - gammaln(a).sum() + xlogy(a - 1.0, x).sum(axis=-1)

    def log_h(self, x, m, theta=None):
        x = np.asarray(x, dtype=float)
        m = np.asarray(m, dtype=float)
        a = self.alpha
        return (gammaln(self.total + m.sum(axis=-1)) - gammaln(self.total)
                + (gammaln(a) - gammaln(a + m)).sum(axis=-1) + xlogy(m, x).sum(axis=-1))

    def update_T(self, y, theta):
        return None

    def theta_flow(self, dt, theta):
        return None

    def log_marginal(self, m, theta, y):
        m = np.asarray(m, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        am = self.alpha + m
        tot = am.sum(axis=-1)
        return (log_multinomial_coef(y) + (gammaln(am + y) - gammaln(am)).sum(axis=-1)
                - gammaln(tot + y.sum()) + gammaln(tot))

    def level_cache(self, dt) -> FactorCache:
        """Factor cache for elapsed time ``dt`` (kept for the eight latest values)."""
        key = time_key(dt)
        cache = self._caches.get(key)
        if cache is None:
            cache = FactorCache(key, self.rates, None, 0, **self.precision)
            self._caches[key] = cache
            if len(self._caches) > 8:
                self._caches.popitem(last=False)
        else:
            self._caches.move_to_end(key)
        return cache

    def death_row(self, m, dt, theta=None) -> TransitionRow:
        if dt <= 0:
            raise ValueError("elapsed time must be positive")
        cache = self.level_cache(dt)
        return transition_row(m, cache.t, self.rates, None, cache=cache)

    def pushforward(self, indices, log_w, dt, theta=None):
        level = int(np.asarray(indices).sum(axis=1).max())
        table = self.level_cache(dt).table(level)
        return kernels.pushforward(indices, log_w, level=table)

    def hstab_e(self, theta1, theta2):
        return None

    def log_hstab_C(self, m1, m2, theta1=None, theta2=None):
        a = self.alpha
        m1 = np.asarray(m1, dtype=float)
        m2 = np.asarray(m2, dtype=float)
        t1 = self.total + m1.sum(axis=-1)
        t2 = self.total + m2.sum(axis=-1)
        t12 = t1 + m2.sum(axis=-1)
        return (gammaln(t1) + gammaln(t2) - gammaln(self.total) - gammaln(t12)
                + (gammaln(a) + gammaln(a + m1 + m2) - gammaln(a + m1) - gammaln(a + m2)).sum(axis=-1))

    def log_hstab_factor(self, m, theta=None):
        """Per-index part of ``log C``: ``log C(m1,m2) = f(m1) + f(m2) + merge(m1+m2)``."""
        m = np.asarray(m, dtype=float)
        return gammaln(self.total + m.sum(axis=-1)) - gammaln(self.alpha + m).sum(axis=-1)

    def log_hstab_merge(self, d, theta1=None, theta2=None):
        d = np.asarray(d, dtype=float)
        a = self.alpha
        return (-gammaln(self.total) - gammaln(self.total + d.sum(axis=-1))
                + (gammaln(a) + gammaln(a + d)).sum(axis=-1))

    def log_component_density(self, x, m, theta=None):
        x = np.asarray(x, dtype=float)
        am = self.alpha + np.asarray(m, dtype=float)
        return (gammaln(am.sum(axis=-1)) - gammaln(am).sum(axis=-1)
                + xlogy(am - 1.0, x).sum(axis=-1))

    def sample_component(self, m, theta, rng, size=None):
        am = self.alpha + np.asarray(m, dtype=float)
        return _dirichlet(am if size is None else np.broadcast_to(am, (size,) + am.shape[-1:]), rng)

    def component_mean(self, m, theta=None):
        am = self.alpha + np.asarray(m, dtype=float)
        return am / am.sum(axis=-1, keepdims=True)

    def log_emission(self, y, x):
        return self.log_emission_block(np.atleast_2d(y), x)

    def log_emission_block(self, rows, x):
        """Summed multinomial log-pmf of all count vectors observed at one time."""
        rows = np.atleast_2d(np.asarray(rows))
        x = np.asarray(x, dtype=float)
        return log_multinomial_coef(rows).sum() + xlogy(rows.sum(axis=0), x).sum(axis=-1)

    def sample_emission(self, x, n_obs: int, rng):
        """One count vector of ``n_obs`` individuals drawn from frequencies ``x``."""
        return rng.multinomial(n_obs, np.asarray(x) / np.sum(x))[None, :]

    def sample_stationary(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return _dirichlet(np.broadcast_to(self.alpha, shape), rng)

    # ------------------------------------------------------ signal transition

    def series(self, dt) -> AncestralSeries:
        key = time_key(dt)
        s = self._series.get(key)
        if s is None:
            s = AncestralSeries(key, self.total, min_dt=self.min_dt, max_refine=self.max_refine)
            self._series[key] = s
        return s

    def sample_ancestral_count(self, dt, rng, weights=None) -> int:
        return self.series(dt).sample(rng, weights)

    def exact_transition_sample(self, x0, dt, rng):
        """Exact draw of ``X_dt`` given ``x0`` (one row per start point)."""
        x0 = np.asarray(x0, dtype=float)
        single = x0.ndim == 1
        x0 = np.atleast_2d(x0)
        ms = self.series(dt).sample_batch(rng, x0.shape[0])
        ls = rng.multinomial(ms, x0 / x0.sum(axis=1, keepdims=True))
        out = _dirichlet(self.alpha + ls, rng)
        return out[0] if single else out

    def mean_at(self, x0, dt):
        """Conditional mean ``alpha/|alpha| + (x0 - alpha/|alpha|) exp(-|alpha| dt / 2)``."""
        base = self.alpha / self.total
        return base + (np.asarray(x0) - base) * np.exp(-self.total * dt / 2.0)

    def forward_kernel(self, y_rows, ctg_next: CostToGo, dt) -> "ForwardKernel":
        return ForwardKernel(self, y_rows, ctg_next, dt)

    def forward_kernel_sample(self, x_prev, y_rows, ctg_next: CostToGo, dt, rng):
        """Draw ``x_i`` given ``x_{i-1}``, the data at time i and the cost-to-go of time i."""
        return self.forward_kernel(y_rows, ctg_next, dt).sample(x_prev, rng)


def _dirichlet(alpha, rng):
    g = rng.standard_gamma(alpha)
    return g / g.sum(axis=-1, keepdims=True)


class ForwardKernel:
    """Sampler of ``p(x_i | x_{i-1}, y_{i:T})`` for one time step.

    With ``c`` the cost-to-go coefficients of time ``i`` and
    ``H_k = Gamma(|alpha|+|k|)/Gamma(|alpha|) prod_j Gamma(alpha_j)/Gamma(alpha_j+k_j)``,
    the kernel is the mixture over ``m ~ r_m q_m``, ``l | m`` and ``k | l`` of
    ``Dir(alpha + l + y + k)`` with

        W_{l,k} = c_y c_k H_k B(alpha + l + y + k) / B(alpha + l),
        R_l = sum_k W_{l,k},   r_m = sum_{|l|=m} Mult(l; m, x_{i-1}) R_l / p(y_{i:T} | x_{i-1}).

    ``R_l`` does not depend on ``x_{i-1}`` and is cached per level.
    """

    def __init__(self, model: WfModel, y_rows, ctg_next: CostToGo, dt: float):
        from .inference import ctg_step
        self.model = model
        self.dt = float(dt)
        self.series = model.series(dt)
        rows = np.atleast_2d(np.asarray(y_rows, dtype=np.int64))
        self.y = rows.sum(axis=0)
        self.log_cy = float(log_multinomial_coef(rows).sum())
        a = model.alpha
        self.k_idx = ctg_next.indices
        self.k_logc = ctg_next.log_coeffs + (gammaln(model.total + self.k_idx.sum(axis=1))
                                             - gammaln(model.total)
                                             + (gammaln(a) - gammaln(a + self.k_idx)).sum(axis=1))
        one = ctg_step(ctg_next, rows, dt, model)
        self.norm_idx, self.norm_logc = one.indices, one.log_coeffs
        self._levels: dict[int, tuple] = {}

    def _level(self, m: int):
        """Compositions of ``m`` and their ``log R_l``."""
        got = self._levels.get(m)
        if got is not None:
            return got
        a = self.model.alpha
        tot = self.model.total
        ls = compositions(m, self.model.dim)
        ayk = a + self.y + self.k_idx  # (nk, K)
        tail = self.log_cy + self.k_logc - gammaln(tot + m + self.y.sum() + self.k_idx.sum(axis=1))
        den = gammaln(a + ls).sum(axis=1) - gammaln(tot + m)
        logR = np.empty(ls.shape[0])
        step = max(1, 2_000_000 // max(1, ayk.size))
        for s in range(0, ls.shape[0], step):
            num = gammaln(ls[s:s + step, None, :] + ayk[None, :, :]).sum(axis=2)
            logR[s:s + step] = logsumexp(num + tail[None, :], axis=1) - den[s:s + step]
        self._levels[m] = (ls, logR)
        return ls, logR

    def _log_W_row(self, l):
        a = self.model.alpha
        tot = self.model.total
        m = int(l.sum())
        num = (gammaln(l[None, :] + a + self.y + self.k_idx).sum(axis=1)
               - gammaln(tot + m + self.y.sum() + self.k_idx.sum(axis=1)))
        den = gammaln(a + l).sum() - gammaln(tot + m)
        return self.log_cy + self.k_logc + num - den

    def log_normalizer(self, x_prev) -> float:
        """``log p(y_{i:T} | x_{i-1})``."""
        return float(logsumexp(self.norm_logc + self.model.log_h(x_prev, self.norm_idx)))

    def log_normalizer_batch(self, X, max_cells: int = 2_000_000) -> np.ndarray:
        """:meth:`log_normalizer` for every row of ``X``."""
        X = np.atleast_2d(X)
        idx = self.norm_idx
        base = self.norm_logc + self.model.log_h(np.full(idx.shape[1], 1.0), idx)
        out = np.empty(X.shape[0])
        step = max(1, max_cells // max(1, idx.shape[0] * idx.shape[1]))
        for s in range(0, X.shape[0], step):
            lx = xlogy(idx[None, :, :], X[s:s + step, None, :]).sum(axis=2)
            out[s:s + step] = logsumexp(base[None, :] + lx, axis=1)
        return out

    def log_r(self, m: int, x_prev, log_z: float) -> float:
        ls, logR = self._level(m)
        lmn = log_multinomial_coef(ls) + xlogy(ls, x_prev).sum(axis=1)
        return float(logsumexp(lmn + logR) - log_z)

    def sample(self, x_prev, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        log_z = self.log_normalizer(x_prev)
        m = self.series.sample(rng, weights=lambda mm: math.exp(self.log_r(mm, x_prev, log_z)))
        ls, logR = self._level(m)
        lw = log_multinomial_coef(ls) + xlogy(ls, x_prev).sum(axis=1) + logR
        li = _categorical(lw, rng)
        l = ls[li]
        kw = self._log_W_row(l)
        ki = _categorical(kw, rng)
        return _dirichlet(self.model.alpha + l + self.y + self.k_idx[ki], rng)

    def sample_batch(self, x_prev, rng) -> np.ndarray:
        """One draw per row of ``x_prev``, vectorized over the rows."""
        X = np.atleast_2d(np.asarray(x_prev, dtype=float))
        n = X.shape[0]
        log_z = self.log_normalizer_batch(X)

        def level_terms(m, rows):
            ls, logR = self._level(m)
            return log_multinomial_coef(ls)[None, :] + xlogy(ls[None, :, :], X[rows, None, :]).sum(axis=2) + logR[None, :]

        def weights(m, rows):
            return np.exp(logsumexp(level_terms(m, rows), axis=1) - log_z[rows])

        ms = self.series.sample_batch(rng, n, weights=weights)
        ls_out = np.zeros_like(X, dtype=np.int64)
        for m in np.unique(ms):
            rows = np.nonzero(ms == m)[0]
            ls, _ = self._level(int(m))
            ls_out[rows] = ls[_categorical_rows(level_terms(int(m), rows), rng)]
        a = self.model.alpha
        tot = self.model.total
        ks = np.empty(n, dtype=np.int64)
        for l in np.unique(ls_out, axis=0):
            rows = np.nonzero((ls_out == l).all(axis=1))[0]
            kw = self._log_W_row(l)
            ks[rows] = _categorical_rows(np.broadcast_to(kw, (rows.size, kw.size)), rng)
        return _dirichlet(a + ls_out + self.y + self.k_idx[ks], rng)


def _categorical_rows(log_w, rng) -> np.ndarray:
    """One categorical draw per row of a log-weight matrix."""
    p = np.exp(log_w - np.max(log_w, axis=1, keepdims=True))
    c = np.cumsum(p, axis=1)
    u = rng.random(log_w.shape[0]) * c[:, -1]
    pos = (c <= u[:, None]).sum(axis=1)
    return np.minimum(pos, log_w.shape[1] - 1)


def _categorical(log_w, rng) -> int:
    p = np.exp(log_w - np.max(log_w))
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))
