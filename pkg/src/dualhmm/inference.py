"""Filtering, prediction, likelihood, cost-to-go and marginal smoothing recursions.

All recursions act on finite mixtures ``sum_m w_m g(x, m, theta)``:

* update: ``m -> m + y``, ``theta -> T(y, theta)``, ``w_m -> w_m mu_{m,theta}(y)``;
* predict: weights pushed through the death dual onto the down-set of the
  support, ``theta -> Theta_dt(theta)``;
* cost-to-go: the same two maps applied backwards to unnormalized
  coefficients of ``h``;
* smoothing: products ``h(x,m,theta) h(x,n,theta')`` collapsed onto
  ``h(x, m+n, e(theta, theta'))`` with constants ``C``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import box_shape, logsumexp_normalize, logsumexp
from .kernels import cir_filter_log_marginals
from .model import CostToGo, ModelContract, ObservationSeries, WeightedMixture

_TIME_TOL = 1e-9


# ---------------------------------------------------------------- pruning


@dataclass(frozen=True)
class PruneRule:
    """Mixture pruning rule applied after each update.

    ``kind`` is one of ``"off"``, ``"number"`` (keep the ``value`` largest),
    ``"mass"`` (keep the smallest weight-sorted prefix reaching fraction
    ``value``) or ``"threshold"`` (keep weights ``>= value``, or
    ``>= value * max`` when ``relative``).
    """

    kind: str = "off"
    value: float | None = None
    relative: bool = False

    def __post_init__(self):
        if self.kind == "off":
            return
        if self.kind == "number":
            if self.value is None or int(self.value) != self.value or self.value < 1:
                raise ValueError("fixed_number needs a positive integer")
        elif self.kind == "mass":
            if self.value is None or not 0.0 < self.value <= 1.0:
                raise ValueError("fixed_mass needs a fraction in (0, 1]")
        elif self.kind == "threshold":
            if self.value is None or not self.value > 0.0:
                raise ValueError("fixed_threshold needs a positive threshold")
        else:
            raise ValueError(f"unknown prune rule {self.kind!r}")

    @classmethod
    def off(cls) -> "PruneRule":
        return cls("off")

    @classmethod
    def fixed_number(cls, n: int) -> "PruneRule":
        return cls("number", int(n))

    @classmethod
    def fixed_mass(cls, rho: float) -> "PruneRule":
        return cls("mass", float(rho))

    @classmethod
    def fixed_threshold(cls, eps: float, relative: bool = False) -> "PruneRule":
        return cls("threshold", float(eps), relative)

    @classmethod
    def parse(cls, text) -> "PruneRule":
        """Parse ``off``, ``fixed_number:N``, ``fixed_mass:RHO``, ``fixed_threshold:EPS``
        or ``fixed_threshold_rel:EPS``."""
        if text is None or str(text).strip().lower() in ("off", "none", ""):
            return cls.off()
        name, _, arg = str(text).strip().partition(":")
        name = name.strip().lower()
        try:
            if name == "fixed_number":
                v = float(arg)
                if v != int(v):
                    raise ValueError
                return cls.fixed_number(int(v))
            if name == "fixed_mass":
                return cls.fixed_mass(float(arg))
            if name == "fixed_threshold":
                return cls.fixed_threshold(float(arg))
            if name == "fixed_threshold_rel":
                return cls.fixed_threshold(float(arg), relative=True)
        except ValueError:
            raise ValueError(f"bad prune rule argument in {text!r}") from None
        raise ValueError(f"unknown prune rule {text!r}")

    def __str__(self) -> str:
        if self.kind == "off":
            return "off"
        if self.kind == "number":
            return f"fixed_number:{int(self.value)}"
        if self.kind == "mass":
            return f"fixed_mass:{self.value:g}"
        return f"fixed_threshold{'_rel' if self.relative else ''}:{self.value:g}"

    def for_cost_to_go(self) -> "PruneRule":
        """Variant applied to unnormalized cost-to-go coefficients."""
        if self.kind == "threshold":
            return PruneRule("threshold", self.value, True)
        return self


def prune(log_w, rule: PruneRule):
    """Select the entries of a weight vector retained by ``rule``.

    Returns
    -------
    keep : ndarray of int
        Retained positions in increasing order (so lexicographic order of
        the index set is preserved).
    discarded_log_mass : float
        Log of the discarded fraction of the total weight (``-inf`` if none).
    """
    log_w = np.asarray(log_w, dtype=float)
    n = log_w.shape[0]
    if n == 0:
        raise ValueError("cannot prune an empty weight map")
    allpos = np.arange(n)
    if rule.kind == "off" or (rule.kind == "mass" and rule.value >= 1.0):
        return allpos, -np.inf
    lw, _ = logsumexp_normalize(log_w)
    w = np.exp(lw)
    if rule.kind == "number":
        if rule.value >= n:
            return allpos, -np.inf
        order = np.argsort(-w, kind="stable")
        keep = np.sort(order[: int(rule.value)])
    elif rule.kind == "mass":
        order = np.argsort(-w, kind="stable")
        cum = np.cumsum(w[order])
        k = int(np.searchsorted(cum, rule.value, side="left")) + 1
        keep = np.sort(order[: min(k, n)])
    else:
        ref = rule.value * w.max() if rule.relative else rule.value
        keep = np.nonzero(w >= ref)[0]
        if keep.size == 0:
            warnings.warn("pruning threshold removes every component; keeping the largest",
                          RuntimeWarning, stacklevel=2)
            keep = np.array([int(np.argmax(w))])
    if keep.size == n:
        return allpos, -np.inf
    mask = np.ones(n, dtype=bool)
    mask[keep] = False
    return keep, float(logsumexp(lw[mask]))


def _apply_prune(mix: WeightedMixture, rule: PruneRule) -> tuple[WeightedMixture, float]:
    keep, dropped = prune(mix.log_weights, rule)
    if keep.size == len(mix):
        return mix, dropped
    lw, _ = logsumexp_normalize(mix.log_weights[keep])
    return WeightedMixture(mix.indices[keep], lw, mix.theta, mix.time), dropped


# ----------------------------------------------------------- forward pass


def update(prior: WeightedMixture, y, model: ModelContract) -> tuple[WeightedMixture, float]:
    """Condition a mixture on one count vector ``y``.

    Returns the posterior mixture and ``log mu(y)``, the log predictive
    probability of ``y`` under the prior mixture.
    """
    if len(prior) == 0:
        raise ValueError("update of an empty mixture")
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    lw = prior.log_weights + model.log_marginal(prior.indices, prior.theta, y)
    lw, log_mu = logsumexp_normalize(lw)
    idx = model.update_t(y, prior.indices)
    return WeightedMixture(idx, lw, model.update_T(y, prior.theta), prior.time), log_mu


def update_block(prior: WeightedMixture, rows, model: ModelContract) -> tuple[WeightedMixture, float]:
    """Fold all count vectors observed at one time, in the given order."""
    total = 0.0
    mix = prior
    for y in np.atleast_2d(rows):
        mix, lm = update(mix, y, model)
        total += lm
    return mix, total


def predict(post: WeightedMixture, dt: float, model: ModelContract) -> WeightedMixture:
    """Propagate a filtering mixture forward by ``dt``."""
    if dt < 0:
        raise ValueError("prediction horizon must be nonnegative")
    if dt == 0:
        return post
    idx, lw = model.pushforward(post.indices, post.log_weights, dt, post.theta)
    lw, _ = logsumexp_normalize(lw)
    return WeightedMixture(idx, lw, model.theta_flow(dt, post.theta), post.time + dt)


def prior_mixture(model: ModelContract, time: float = 0.0) -> WeightedMixture:
    """The stationary law as the single component ``g(., 0, theta0)``."""
    return WeightedMixture(np.zeros((1, model.dim), dtype=np.int64), np.zeros(1), model.theta0, time)


@dataclass
class FilterOutput:
    """Results of a forward filtering pass."""

    filtering: list
    predictive: list
    log_marginals: np.ndarray
    discarded: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def loglik(self) -> float:
        return float(np.sum(self.log_marginals))

    @property
    def times(self) -> np.ndarray:
        return np.array([m.time for m in self.filtering])


def run_filter(series: ObservationSeries, model: ModelContract, prune_rule: PruneRule | None = None,
               store: bool = True) -> FilterOutput:
    """Forward filter with optional pruning after every update.

    The log-likelihood is the sum of the per-time log predictive
    probabilities, the first of which is taken under the stationary prior.
    With ``store=False`` only the last filtering and predictive mixtures are
    kept.
    """
    rule = prune_rule or PruneRule.off()
    filt_list, pred_list = [], []
    log_m = np.empty(len(series))
    dropped = np.full(len(series), -np.inf)
    pred = prior_mixture(model, float(series.times[0]))
    filt = None
    for i, (t, rows) in enumerate(zip(series.times, series.counts)):
        if i > 0:
            pred = predict(filt, float(t - series.times[i - 1]), model)
            pred = WeightedMixture(pred.indices, pred.log_weights, pred.theta, float(t))
        filt, log_m[i] = update_block(pred, rows, model)
        filt, dropped[i] = _apply_prune(filt, rule)
        if store:
            filt_list.append(filt)
            pred_list.append(pred)
    if not store:
        filt_list, pred_list = [filt], [pred]
    return FilterOutput(filt_list, pred_list, log_m, dropped)


def loglik(series: ObservationSeries, model: ModelContract, prune_rule: PruneRule | None = None) -> float:
    """Log-likelihood of the series (exact when ``prune_rule`` is off).

    CIR models go through the fused filter kernel, which gives the same
    value as :func:`run_filter` up to rounding.
    """
    rule = prune_rule or PruneRule.off()
    if getattr(model, "family", None) == "cir":
        p = model.params
        lm, n_warn = cir_filter_log_marginals(series.times, series.counts, model.shape0, model.theta0,
                                         p.gamma, p.lam, rule.kind, rule.value, rule.relative)
        if n_warn:
            warnings.warn("pruning threshold removes every component; keeping the largest",
                          RuntimeWarning, stacklevel=2)
        return float(lm.sum())
    return run_filter(series, model, rule, store=False).loglik


def cir_filter_compact(series: ObservationSeries, model, prune_rule: PruneRule | None = None) -> FilterOutput:
    """CIR forward filter through the fused compiled kernel.

    Same weights and log marginals as :func:`run_filter`, but every mixture
    keeps only its components of nonzero weight, so predictive index sets
    are not the full down-sets.  Used where only the mixtures matter
    (trajectory sampling inside MCMC).
    """
    if getattr(model, "family", None) != "cir":
        raise ValueError("the compact filter is only available for the CIR model")
    rule = prune_rule or PruneRule.off()
    p = model.params
    rec_pred, rec_filt = [], []
    lm, _ = cir_filter_log_marginals(series.times, series.counts, model.shape0, model.theta0, p.gamma, p.lam,
                                     rule.kind, rule.value, rule.relative, record=(rec_pred, rec_filt))

    def build(rec, t):
        lo, lw, th = rec
        live = np.nonzero(np.isfinite(lw))[0]
        return WeightedMixture((lo + live).astype(np.int64)[:, None], lw[live], float(th), float(t))

    filt = [build(r, t) for r, t in zip(rec_filt, series.times)]
    pred = [build(r, t) for r, t in zip(rec_pred, series.times)]
    return FilterOutput(filt, pred, lm, np.full(len(series), np.nan))


# ---------------------------------------------------------- backward pass


def terminal_cost_to_go(model: ModelContract, time: float) -> CostToGo:
    """The constant function 1 = ``h(., 0, theta0)``."""
    return CostToGo(np.zeros((1, model.dim), dtype=np.int64), np.zeros(1), model.theta0, time)


def ctg_update(ctg: CostToGo, rows, model: ModelContract) -> CostToGo:
    """Multiply a cost-to-go by the emission densities of ``rows``."""
    idx, lc, th = ctg.indices, ctg.log_coeffs, ctg.theta
    for y in np.atleast_2d(rows):
        y = np.asarray(y, dtype=np.int64)
        lc = lc + model.log_marginal(idx, th, y)
        idx = model.update_t(y, idx)
        th = model.update_T(y, th)
    return CostToGo(idx, lc, th, ctg.time)


def ctg_predict(ctg: CostToGo, dt: float, model: ModelContract) -> CostToGo:
    """Integrate a cost-to-go against the signal transition over ``dt``."""
    idx, lc = model.pushforward(ctg.indices, ctg.log_coeffs, dt, ctg.theta)
    return CostToGo(idx, lc, model.theta_flow(dt, ctg.theta), ctg.time - dt)


def ctg_step(ctg: CostToGo, rows, dt: float, model: ModelContract, rule: PruneRule | None = None) -> CostToGo:
    """From ``p(y_{i+1:T} | x_i)`` and ``y_i`` to ``p(y_{i:T} | x_{i-1})``."""
    up = ctg_update(ctg, rows, model)
    if rule is not None and rule.kind != "off":
        keep, _ = prune(up.log_coeffs, rule.for_cost_to_go())
        if keep.size < len(up):
            up = CostToGo(up.indices[keep], up.log_coeffs[keep], up.theta, up.time)
    return ctg_predict(up, dt, model)


def cost_to_go_recursion(series: ObservationSeries, model: ModelContract,
                         prune_rule: PruneRule | None = None) -> list:
    """Cost-to-go functions ``p(y_{i+1:T} | x_i)`` for ``i = 0..T``.

    The last entry is the constant 1.  Pruning (if any) is applied to the
    updated coefficients before each backward prediction; thresholds are
    interpreted relative to the largest coefficient.
    """
    T = len(series) - 1
    out = [None] * (T + 1)
    out[T] = terminal_cost_to_go(model, float(series.times[T]))
    for i in range(T - 1, -1, -1):
        dt = float(series.times[i + 1] - series.times[i])
        c = ctg_step(out[i + 1], series.counts[i + 1], dt, model, prune_rule)
        out[i] = CostToGo(c.indices, c.log_coeffs, c.theta, float(series.times[i]))
    return out


def marginal_smooth(filt: WeightedMixture, ctg: CostToGo, model: ModelContract,
                    chunk_pairs: int = 4_000_000) -> WeightedMixture:
    """Combine a filtering mixture with the cost-to-go of the same time.

    Pair weights ``c_m w_n C(m, n)`` are accumulated on the merged index
    ``m + n``; colliding indices are summed.
    """
    if abs(filt.time - ctg.time) > _TIME_TOL * max(1.0, abs(filt.time)):
        raise ValueError(f"time mismatch: filter at {filt.time}, cost-to-go at {ctg.time}")
    A, B = ctg.indices, filt.indices
    theta = model.hstab_e(ctg.theta, filt.theta)
    shape = tuple(int(a) + int(b) + 1 for a, b in zip(A.max(axis=0), B.max(axis=0)))
    strides = np.array([int(np.prod(shape[j + 1:])) for j in range(len(shape))], dtype=np.int64)
    size = int(np.prod(shape))
    fa, fb = A @ strides, B @ strides
    split = getattr(model, "log_hstab_factor", None)
    if split is not None:
        ua = ctg.log_coeffs + model.log_hstab_factor(A, ctg.theta)
        vb = filt.log_weights + model.log_hstab_factor(B, filt.theta)
        grid = np.indices(shape).reshape(len(shape), -1).T
        G = model.log_hstab_merge(grid, ctg.theta, filt.theta)
    acc = np.zeros(size)
    hit = np.zeros(size, dtype=bool)
    top = -np.inf
    step = max(1, chunk_pairs // max(1, B.shape[0]))
    for s in range(0, A.shape[0], step):
        sl = slice(s, s + step)
        flat = (fa[sl, None] + fb[None, :]).ravel()
        if split is not None:
            lw = (ua[sl, None] + vb[None, :]).ravel() + G[flat]
        else:
            lw = (ctg.log_coeffs[sl, None] + filt.log_weights[None, :]
                  + model.log_hstab_C(A[sl, None, :], B[None, :, :], ctg.theta, filt.theta)).ravel()
        hit[flat] = True
        cmax = np.max(lw)
        if not np.isfinite(cmax):
            continue
        if cmax > top:
            if np.isfinite(top):
                acc *= np.exp(top - cmax)
            top = cmax
        acc += np.bincount(flat, weights=np.exp(lw - top), minlength=size)
    pos = np.nonzero(hit)[0]
    idx = np.stack(np.unravel_index(pos, shape), axis=1).astype(np.int64)
    with np.errstate(divide="ignore"):
        lw = np.log(acc[pos]) + top
    lw, _ = logsumexp_normalize(lw)
    return WeightedMixture(idx, lw, theta, filt.time)


@dataclass
class SmootherOutput:
    smoothing: list
    filter: FilterOutput
    cost_to_go: list


def run_smoother(series: ObservationSeries, model: ModelContract, prune_rule: PruneRule | None = None,
                 return_parts: bool = False):
    """Marginal smoothing mixtures at every observation time."""
    fo = run_filter(series, model, prune_rule)
    ctgs = cost_to_go_recursion(series, model, prune_rule)
    sm = [marginal_smooth(f, c, model) for f, c in zip(fo.filtering, ctgs)]
    if return_parts:
        return SmootherOutput(sm, fo, ctgs)
    return sm
