"""Cox-Ingersoll-Ross signal observed through Poisson counts.

The signal solves ``dX = (delta sigma^2 - 2 gamma X) dt + 2 sigma sqrt(X) dB``
and has stationary law ``Ga(delta/2, theta0)`` with ``theta0 = gamma/sigma^2``.
Filtering components are ``Ga(delta/2 + m, theta)``; the dual index ``m``
thins binomially while ``theta`` relaxes towards ``theta0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, ive, xlogy

from . import kernels
from .death import TransitionRow, binomial_row
from .grid import below, logsumexp
from .model import ModelContract


@dataclass(frozen=True)
class CirParams:
    """Internal CIR parameters plus the Poisson emission intensity ``lam``."""

    delta: float
    gamma: float
    sigma: float
    lam: float = 1.0

    def __post_init__(self):
        for name in ("delta", "gamma", "sigma", "lam"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"CIR parameter {name} must be positive, got {v}")

    @property
    def theta0(self) -> float:
        return self.gamma / self.sigma**2

    @property
    def a(self) -> float:
        return 2.0 * self.gamma

    @property
    def b(self) -> float:
        return self.delta * self.sigma**2 / (2.0 * self.gamma)

    @property
    def s(self) -> float:
        return 2.0 * self.sigma

    @classmethod
    def from_natural(cls, a: float, b: float, s: float, lam: float = 1.0) -> "CirParams":
        """Map mean-reversion speed ``a``, long-run mean ``b`` and volatility ``s``."""
        for name, v in (("a", a), ("b", b), ("s", s)):
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"natural parameter {name} must be positive, got {v}")
        gamma = a / 2.0
        sigma = s / 2.0
        delta = 2.0 * b * gamma / sigma**2
        return cls(delta, gamma, sigma, lam)

    def to_natural(self) -> tuple[float, float, float]:
        return self.a, self.b, self.s

    def summary(self) -> dict:
        return {"delta": self.delta, "gamma": self.gamma, "sigma": self.sigma, "lam": self.lam,
                "a": self.a, "b": self.b, "s": self.s, "theta0": self.theta0}


def _level(m):
    m = np.asarray(m)
    if m.ndim == 0:
        return m.astype(float)
    return m[..., 0].astype(float)


class CirModel(ModelContract):
    """CIR/Poisson hidden Markov model."""

    dim = 1
    family = "cir"

    def __init__(self, params: CirParams):
        self.params = params
        self.shape0 = params.delta / 2.0

    def __repr__(self) -> str:
        p = self.params
        return f"CirModel(delta={p.delta}, gamma={p.gamma}, sigma={p.sigma}, lam={p.lam})"

    @property
    def theta0(self) -> float:
        return self.params.theta0

    # --------------------------------------------------------------- contract

    def log_pi_density(self, x):
        return stats.gamma.logpdf(x, self.shape0, scale=1.0 / self.theta0)

    def log_h(self, x, m, theta):
        x = np.asarray(x, dtype=float)
        mm = _level(m)
        a = self.shape0
        return (gammaln(a) - gammaln(a + mm) - a * np.log(self.theta0)
                + (a + mm) * np.log(theta) + xlogy(mm, x) - (theta - self.theta0) * x)

    def update_T(self, y, theta):
        return theta + self.params.lam

    def theta_flow(self, dt, theta):
        if dt == 0:
            return theta
        t0 = self.theta0
        em1 = np.expm1(2.0 * self.params.gamma * dt)
        if not np.isfinite(em1):
            return t0
        return t0 * theta * (em1 + 1.0) / (theta * em1 + t0)

    def theta_prime(self, dt) -> float:
        """``theta0 / (exp(2 gamma dt) - 1)``."""
        return self.theta0 / np.expm1(2.0 * self.params.gamma * dt)

    def survive_prob(self, dt, theta) -> float:
        """Per-individual survival probability of the dual over ``dt``.

        Equals ``theta0 / (theta (exp(2 gamma dt) - 1) + theta0)``.
        """
        em1 = np.expm1(2.0 * self.params.gamma * dt)
        return self.theta0 / (theta * em1 + self.theta0)

    def log_marginal(self, m, theta, y):
        y = float(np.asarray(y).reshape(-1)[0])
        r = self.shape0 + _level(m)
        lam = self.params.lam
        return (gammaln(r + y) - gammaln(r) - gammaln(y + 1.0)
                + r * np.log(theta / (theta + lam)) + y * np.log(lam / (theta + lam)))

    def death_row(self, m, dt, theta) -> TransitionRow:
        if dt <= 0:
            raise ValueError("elapsed time must be positive")
        p = self.survive_prob(dt, theta)
        mm = int(np.asarray(m).reshape(-1)[0])
        if p <= 0.0:
            idx = below([[mm]])
            lp = np.full(mm + 1, -np.inf)
            lp[0] = 0.0
            return TransitionRow((mm,), float(dt), idx, lp)
        if p >= 1.0:
            idx = below([[mm]])
            lp = np.full(mm + 1, -np.inf)
            lp[-1] = 0.0
            return TransitionRow((mm,), float(dt), idx, lp)
        return binomial_row(mm, p, elapsed=dt)

    def pushforward(self, indices, log_w, dt, theta):
        p = self.survive_prob(dt, theta)
        if 0.0 < p < 1.0:
            return kernels.pushforward(indices, log_w, survive_prob=p)
        target = below(indices)
        out = np.full(target.shape[0], -np.inf)
        if p <= 0.0:
            out[0] = logsumexp(log_w)
        else:
            pos = {int(v): i for i, v in enumerate(target[:, 0])}
            for m, lw in zip(indices[:, 0], log_w):
                out[pos[int(m)]] = np.logaddexp(out[pos[int(m)]], lw)
        return target, out

    def hstab_e(self, theta1, theta2):
        return theta1 + theta2 - self.theta0

    def log_hstab_C(self, m1, m2, theta1, theta2):
        a = self.shape0
        m1 = _level(m1)
        m2 = _level(m2)
        e = theta1 + theta2 - self.theta0
        return (gammaln(a) - a * np.log(self.theta0) + gammaln(a + m1 + m2)
                - gammaln(a + m1) - gammaln(a + m2) + (a + m1) * np.log(theta1)
                + (a + m2) * np.log(theta2) - (a + m1 + m2) * np.log(e))

    def log_hstab_factor(self, m, theta):
        """Per-index part of ``log C``: ``log C(m1,m2) = f(m1) + f(m2) + merge(m1+m2)``."""
        a = self.shape0 + _level(m)
        return a * np.log(theta) - gammaln(a)

    def log_hstab_merge(self, d, theta1, theta2):
        a = self.shape0
        d = _level(d)
        return (gammaln(a) - a * np.log(self.theta0) + gammaln(a + d)
                - (a + d) * np.log(theta1 + theta2 - self.theta0))

    def component_shape(self, m):
        return self.shape0 + _level(m)

    def log_component_density(self, x, m, theta):
        return stats.gamma.logpdf(x, self.component_shape(m), scale=1.0 / theta)

    def sample_component(self, m, theta, rng, size=None):
        return rng.gamma(self.component_shape(m), 1.0 / theta, size=size)

    def component_mean(self, m, theta):
        return (self.component_shape(m) / theta)[..., None]

    def log_emission(self, y, x):
        return self.log_emission_block(np.atleast_2d(y), x)

    def log_emission_block(self, rows, x):
        """Summed Poisson log-pmf of all rows observed at one time."""
        rows = np.asarray(rows).reshape(-1)
        x = np.asarray(x, dtype=float)
        lam = self.params.lam
        return (xlogy(rows.sum(), lam * x) - rows.size * lam * x
                - gammaln(rows + 1.0).sum())

    def sample_emission(self, x, n_obs: int, rng):
        return rng.poisson(self.params.lam * x, size=(n_obs, 1))

    def sample_stationary(self, rng, size=None):
        return rng.gamma(self.shape0, 1.0 / self.theta0, size=size)

    # ------------------------------------------------------ signal transition

    def exact_transition_sample(self, x0, dt, rng):
        """Draw ``X_dt | X_0 = x0`` as a Poisson mixture of gamma laws."""
        x0 = np.asarray(x0, dtype=float)
        if dt <= 0:
            raise ValueError("elapsed time must be positive")
        tp = self.theta_prime(dt)
        rate = self.theta0 / -np.expm1(-2.0 * self.params.gamma * dt)
        k = rng.poisson(tp * x0)
        return rng.gamma(self.shape0 + k, 1.0 / rate)

    def log_transition_density(self, x0, x1, dt):
        """Log transition density via the scaled modified Bessel function.

        Falls back to the Poisson-gamma series when the Bessel evaluation
        under- or overflows.
        """
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        g = self.params.gamma
        c = g / (-np.expm1(-2.0 * g * dt) * self.params.sigma**2)
        q = self.shape0 - 1.0
        u = c * x0 * np.exp(-2.0 * g * dt)
        v = c * x1
        z = 2.0 * np.sqrt(u * v)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            iv = ive(q, z)
            out = np.log(c) - u - v + 0.5 * q * np.log(v / u) + np.log(iv) + z
        bad = ~np.isfinite(out) | ~(iv > 0)
        if np.any(bad):
            b0, b1 = np.broadcast_arrays(x0, x1)
            out = np.array(out, dtype=float, copy=True).reshape(np.broadcast(x0, x1).shape)
            for pos in zip(*np.nonzero(np.broadcast_to(bad, out.shape))):
                out[pos] = self._log_density_series(float(b0[pos]), float(b1[pos]), dt)
        return out

    def _log_density_series(self, x0, x1, dt):
        if x0 <= 0 or x1 <= 0:
            raise ValueError(f"transition density needs positive states, got {x0}, {x1}")
        tp = self.theta_prime(dt)
        rate = self.theta0 / -np.expm1(-2.0 * self.params.gamma * dt)
        mu = tp * x0
        hi = int(mu + 40.0 * np.sqrt(mu + 1.0) + 50)
        k = np.arange(hi + 1)
        terms = stats.poisson.logpmf(k, mu) + stats.gamma.logpdf(x1, self.shape0 + k, scale=1.0 / rate)
        val = float(logsumexp(terms))
        if not np.isfinite(val):
            raise FloatingPointError(
                f"transition density evaluation failed at x0={x0}, x1={x1}, dt={dt}")
        return val

    def mean_at(self, x0, dt):
        """Conditional mean ``b + (x0 - b) exp(-a dt)``."""
        b = self.params.b
        return b + (x0 - b) * np.exp(-self.params.a * dt)

    def var_at(self, x0, dt):
        """Conditional variance of ``X_dt`` given ``x0``.

        ``2 c X_dt`` is noncentral chi-square with ``delta`` degrees of
        freedom and noncentrality ``2 c x0 exp(-2 gamma dt)``.
        """
        g = self.params.gamma
        e = np.exp(-2.0 * g * dt)
        c = g / ((1.0 - e) * self.params.sigma**2)
        return (self.params.delta + 4.0 * c * x0 * e) / (2.0 * c**2)
