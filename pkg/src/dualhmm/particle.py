"""Bootstrap particle filter, marginal particle smoother and gamma kernel densities.

The particle filter propagates particles with the exact signal transition,
weights them by the emission probabilities and resamples systematically
when the effective sample size drops below a fraction of ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import logsumexp
from .metrics import GammaMixture
from .model import ModelContract, ObservationSeries


@dataclass(frozen=True)
class ParticleCloud:
    """Weighted particles at one observation time (before any resampling)."""

    time: float
    states: np.ndarray
    log_weights: np.ndarray  # normalized
    resampled: bool = False

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self) -> np.ndarray:
        s = self.states.reshape(self.states.shape[0], -1)
        return self.weights @ s


@dataclass
class ParticleFilterResult:
    loglik: float
    log_increments: np.ndarray
    clouds: list = field(default_factory=list)
    n_resample: int = 0


def systematic_resample(weights, rng) -> np.ndarray:
    """Ancestor indices by systematic resampling with a single uniform."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    c = np.cumsum(w)
    c /= c[-1]
    pos = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, pos, side="right"), n - 1)


def bootstrap_pf(series: ObservationSeries, model: ModelContract, n_particles: int, rng,
                 ess_frac: float = 0.5, store: bool = False) -> ParticleFilterResult:
    """Bootstrap particle filter estimate of the log-likelihood.

    The estimate is ``sum_i log sum_j W_{i-1}^j f(y_i | x_i^j)`` with
    ``W`` the normalized weights carried over from the previous time.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not 0.0 <= ess_frac <= 1.0:
        raise ValueError("ess_frac must lie in [0, 1]")
    N = int(n_particles)
    x = model.sample_stationary(rng, size=N)
    logW = np.full(N, -np.log(N))
    incs = np.empty(len(series))
    clouds = []
    n_res = 0
    for i, (t, rows) in enumerate(zip(series.times, series.counts)):
        if i > 0:
            x = model.exact_transition_sample(x, float(t - series.times[i - 1]), rng)
        lf = model.log_emission_block(rows, x)
        lw = logW + lf
        inc = logsumexp(lw)
        if not np.isfinite(inc):
            raise FloatingPointError(
                f"all particle weights vanish at time {t} (index {i}); max log emission {np.max(lf)}")
        incs[i] = inc
        logW = lw - inc
        ess = 1.0 / np.sum(np.exp(2.0 * logW))
        res = ess < ess_frac * N
        if store:
            clouds.append(ParticleCloud(float(t), x.copy(), logW.copy(), bool(res)))
        if res:
            a = systematic_resample(np.exp(logW), rng)
            x = x[a]
            logW = np.full(N, -np.log(N))
            n_res += 1
    return ParticleFilterResult(float(incs.sum()), incs, clouds, n_res)


def ffbs_particle_smoother(series: ObservationSeries, model, n_particles: int, rng,
                           ess_frac: float = 0.5, chunk: int = 2_000_000) -> list:
    """Marginal smoothing clouds by backward reweighting of the filter clouds.

    ``w_{i|T}^j = w_i^j sum_k w_{i+1|T}^k f(x_{i+1}^k | x_i^j) / nu_{i+1}^k`` with
    ``nu_{i+1}^k = sum_l w_i^l f(x_{i+1}^k | x_i^l)`` and ``f`` the exact
    transition density.  Only models with a transition density (CIR) are
    supported.
    """
    if not hasattr(model, "log_transition_density"):
        raise NotImplementedError(f"particle smoothing needs a transition density; {model.family} has none")
    pf = bootstrap_pf(series, model, n_particles, rng, ess_frac, store=True)
    clouds = pf.clouds
    T = len(clouds) - 1
    out = [None] * (T + 1)
    out[T] = clouds[T]
    for i in range(T - 1, -1, -1):
        dt = float(series.times[i + 1] - series.times[i])
        xi = clouds[i].states
        lwi = clouds[i].log_weights
        xn = clouds[i + 1].states
        lsn = out[i + 1].log_weights
        N = xi.shape[0]
        step = max(1, chunk // max(1, N))
        acc = np.full(N, -np.inf)
        for s in range(0, xn.shape[0], step):
            lf = model.log_transition_density(xi[:, None], xn[None, s:s + step], dt)
            lnu = logsumexp(lwi[:, None] + lf, axis=0)
            acc = np.logaddexp(acc, logsumexp(lf + (lsn[s:s + step] - lnu)[None, :], axis=1))
        lw = lwi + acc
        lw -= logsumexp(lw)
        out[i] = ParticleCloud(clouds[i].time, xi, lw, clouds[i].resampled)
    return out


def plugin_bandwidth(samples, weights=None) -> float:
    """``sigma_hat n^(-2/5)`` with the (weighted) sample standard deviation."""
    x = np.asarray(samples, dtype=float)
    if weights is None:
        n = x.size
        sd = float(np.std(x, ddof=1)) if n > 1 else float(abs(x[0]))
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        n = 1.0 / np.sum(w ** 2)
        mu = w @ x
        sd = float(np.sqrt(w @ (x - mu) ** 2))
    if not sd > 0:
        sd = float(np.mean(x))
    return sd * n ** (-0.4)


def gamma_kde(samples, bandwidth: float | None = None, weights=None) -> GammaMixture:
    """Gamma kernel density estimate: kernels ``Ga(x_i / b + 1, scale b)``.

    Equal weights unless ``weights`` are given (for weighted particle clouds).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    if np.any(~(x > 0)):
        raise ValueError("gamma kernels need positive samples")
    b = plugin_bandwidth(x, weights) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ValueError("bandwidth must be positive")
    w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float)
    return GammaMixture(x / b + 1.0, np.full(x.size, 1.0 / b), w)
