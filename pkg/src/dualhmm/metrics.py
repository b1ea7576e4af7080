"""Closed-form L2 distances between gamma or Dirichlet mixtures, and error summaries.

For densities ``f_1 = Ga(a_1, b_1)`` and ``f_2 = Ga(a_2, b_2)`` (rate
parametrization) with ``a_1 + a_2 > 1``

    int f_1 f_2 = b_1^a_1 b_2^a_2 Gamma(a_1 + a_2 - 1)
                  / (Gamma(a_1) Gamma(a_2) (b_1 + b_2)^(a_1 + a_2 - 1)),

and for Dirichlet densities ``int f_1 f_2 = B(a_1 + a_2 - 1) / (B(a_1) B(a_2))``.
The squared distance is the quadratic form of the signed weight vector of
``g - h`` in the Gram matrix of these integrals.  Components shared by both
mixtures are merged first, so equal mixtures give exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import ModelContract, WeightedMixture


class UnsupportedMixtureError(ValueError):
    """Mixture outside the domain of the closed-form L2 formulas."""


def _normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("need a nonempty 1-d weight vector")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    s = w.sum()
    if s <= 0:
        raise ValueError("weights must not all vanish")
    return w / s


@dataclass(frozen=True)
class GammaMixture:
    """``sum_i w_i Ga(shape_i, rate_i)``."""

    shapes: np.ndarray
    rates: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        sh = np.atleast_1d(np.asarray(self.shapes, dtype=float))
        rt = np.broadcast_to(np.asarray(self.rates, dtype=float), sh.shape).copy()
        w = _normalize(np.broadcast_to(np.asarray(self.weights, dtype=float), sh.shape))
        if np.any(~(sh > 0)) or np.any(~(rt > 0)):
            raise ValueError("gamma shapes and rates must be positive")
        object.__setattr__(self, "shapes", sh)
        object.__setattr__(self, "rates", rt)
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, shape: float, rate: float) -> "GammaMixture":
        return cls(np.array([shape]), np.array([rate]), np.ones(1))

    @classmethod
    def from_weighted(cls, mix: WeightedMixture, model: ModelContract) -> "GammaMixture":
        """Gamma mixture represented by a CIR filtering or smoothing mixture."""
        w = mix.weights
        keep = w > 0
        shapes = model.component_shape(mix.indices[keep])
        return cls(shapes, np.full(shapes.shape, float(mix.theta)), w[keep])

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lp = (self.shapes * np.log(self.rates) - gammaln(self.shapes)
              + (self.shapes - 1.0) * np.log(x[..., None]) - self.rates * x[..., None])
        return np.exp(lp) @ self.weights

    def _params(self) -> np.ndarray:
        return np.stack([self.shapes, self.rates], axis=1)


@dataclass(frozen=True)
class DirichletMixture:
    """``sum_i w_i Dir(alpha_i)`` with ``alphas`` of shape ``(n, K)``."""

    alphas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        w = _normalize(np.broadcast_to(np.asarray(self.weights, dtype=float), a.shape[:1]))
        if np.any(~(a > 0)):
            raise ValueError("Dirichlet parameters must be positive")
        if a.shape[1] < 2:
            raise ValueError("Dirichlet mixtures need K >= 2")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weighted(cls, mix: WeightedMixture, model: ModelContract) -> "DirichletMixture":
        """Dirichlet mixture represented by a Wright-Fisher mixture."""
        w = mix.weights
        keep = w > 0
        return cls(model.alpha[None, :] + mix.indices[keep], w[keep])

    def pdf(self, x) -> np.ndarray:
        """Density at points ``x`` of shape ``(..., K)`` on the simplex."""
        x = np.asarray(x, dtype=float)
        a = self.alphas
        logB = gammaln(a).sum(axis=1) - gammaln(a.sum(axis=1))
        lp = ((a - 1.0) * np.log(x[..., None, :])).sum(axis=-1) - logB
        return np.exp(lp) @ self.weights

    def _params(self) -> np.ndarray:
        return self.alphas


def _merge_signed(pg: np.ndarray, wg: np.ndarray, ph: np.ndarray, wh: np.ndarray):
    """Parameters and signed weights of ``g - h`` with identical components merged."""
    params = np.concatenate([pg, ph], axis=0)
    w = np.concatenate([wg, -wh])
    uniq, inv = np.unique(params, axis=0, return_inverse=True)
    inv = inv.ravel()
    pos = np.bincount(inv, weights=np.maximum(w, 0.0), minlength=uniq.shape[0])
    neg = np.bincount(inv, weights=np.maximum(-w, 0.0), minlength=uniq.shape[0])
    # components present in both with equal weight cancel exactly
    merged = np.where(pos == neg, 0.0, pos - neg)
    keep = merged != 0.0
    return uniq[keep], merged[keep]


def _quadratic_form(logG: np.ndarray, w: np.ndarray) -> float:
    if w.size == 0:
        return 0.0
    top = np.max(logG)
    q = float(w @ np.exp(logG - top) @ w) * np.exp(top)
    return max(q, 0.0)


def gamma_log_gram(sa, ra, sb, rb) -> np.ndarray:
    """``log int Ga(sa_i, ra_i) Ga(sb_j, rb_j)`` for all pairs."""
    s = sa[:, None] + sb[None, :] - 1.0
    return (sa[:, None] * np.log(ra)[:, None] + sb[None, :] * np.log(rb)[None, :]
            - gammaln(sa)[:, None] - gammaln(sb)[None, :] + gammaln(s)
            - s * np.log(ra[:, None] + rb[None, :]))


def dirichlet_log_gram(aa, ab) -> np.ndarray:
    """``log int Dir(aa_i) Dir(ab_j)`` for all pairs."""

    def logB(a):
        return gammaln(a).sum(axis=-1) - gammaln(a.sum(axis=-1))

    s = aa[:, None, :] + ab[None, :, :] - 1.0
    return logB(s) - logB(aa)[:, None] - logB(ab)[None, :]


def _check_gamma(m: GammaMixture):
    if np.any(m.shapes <= 0.5):
        raise UnsupportedMixtureError("closed-form gamma L2 needs every shape > 0.5")


def _check_dirichlet(m: DirichletMixture):
    if np.any(m.alphas <= 0.5):
        raise UnsupportedMixtureError("closed-form Dirichlet L2 needs every parameter > 0.5")


def l2_gamma(g: GammaMixture, h: GammaMixture) -> float:
    """L2 distance between two gamma mixtures."""
    _check_gamma(g)
    _check_gamma(h)
    p, w = _merge_signed(g._params(), g.weights, h._params(), h.weights)
    if w.size == 0:
        return 0.0
    return float(np.sqrt(_quadratic_form(gamma_log_gram(p[:, 0], p[:, 1], p[:, 0], p[:, 1]), w)))


def l2_dirichlet(g: DirichletMixture, h: DirichletMixture) -> float:
    """L2 distance between two Dirichlet mixtures of the same dimension."""
    if g.alphas.shape[1] != h.alphas.shape[1]:
        raise ValueError("Dirichlet mixtures of different dimension")
    _check_dirichlet(g)
    _check_dirichlet(h)
    p, w = _merge_signed(g._params(), g.weights, h._params(), h.weights)
    if w.size == 0:
        return 0.0
    return float(np.sqrt(_quadratic_form(dirichlet_log_gram(p, p), w)))


def l2_distance(g, h) -> float:
    """Dispatch on the mixture family."""
    if isinstance(g, GammaMixture) and isinstance(h, GammaMixture):
        return l2_gamma(g, h)
    if isinstance(g, DirichletMixture) and isinstance(h, DirichletMixture):
        return l2_dirichlet(g, h)
    raise TypeError("both arguments must be gamma mixtures or both Dirichlet mixtures")


def max_l2_over_time(exact: list, approx: list) -> float:
    """Largest L2 distance between aligned lists of mixtures."""
    if len(exact) != len(approx):
        raise ValueError("mixture lists must have the same length")
    if not exact:
        raise ValueError("empty mixture lists")
    return max(l2_distance(g, h) for g, h in zip(exact, approx))


def likelihood_rmse(estimates, exact: float) -> float:
    """Root mean squared error of likelihood estimates around the exact value."""
    e = np.asarray(estimates, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("need at least one estimate")
    return float(np.sqrt(np.mean((e - exact) ** 2)))
