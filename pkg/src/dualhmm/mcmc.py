"""Parameter inference: random-walk Metropolis-Hastings and a joint trajectory sampler.

Positive parameters are proposed on the log scale with a Gaussian random
walk; the target on ``phi = log psi`` is ``log prior(psi) + sum(phi) +
log-likelihood(psi)``.  The proposal covariance is frozen after a pilot
run as ``2.38^2 / d`` times the empirical covariance of the pilot draws.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr, xlogy

from .cir import CirModel, CirParams
from .inference import PruneRule, cir_filter_compact, loglik
from .model import ObservationSeries
from .trajectory import sample_joint_cir
from .wf import WfModel, WfParams


# ------------------------------------------------------------------ priors


@dataclass(frozen=True)
class Prior:
    """Prior on one positive parameter.

    ``kind="exponential"`` uses ``rate``; ``kind="truncated_normal"`` is a
    normal law with mean ``loc`` and standard deviation ``scale`` restricted
    to the positive half-line.
    """

    kind: str
    rate: float = 0.01
    loc: float = 5.0
    scale: float = 4.0

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.rate > 0:
                raise ValueError("exponential prior needs a positive rate")
        elif self.kind == "truncated_normal":
            if not self.scale > 0:
                raise ValueError("truncated normal prior needs a positive scale")
        else:
            raise ValueError(f"unknown prior kind {self.kind!r}")

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == "exponential":
                out = np.log(self.rate) - self.rate * x
            else:
                z = (x - self.loc) / self.scale
                out = (-0.5 * z * z - 0.5 * np.log(2 * np.pi) - np.log(self.scale)
                       - log_ndtr(self.loc / self.scale))
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size=None) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=size)
        out = np.atleast_1d(rng.normal(self.loc, self.scale, size=size))
        bad = out <= 0
        while np.any(bad):
            out[bad] = rng.normal(self.loc, self.scale, size=int(bad.sum()))
            bad = out <= 0
        return out if size is not None else out[0]

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": self.kind, "rate": self.rate}
        return {"kind": self.kind, "loc": self.loc, "scale": self.scale}


def default_priors(family: str, dim: int = 3) -> tuple:
    if family == "cir":
        return tuple(Prior("exponential", rate=0.01) for _ in range(3))
    if family == "wf":
        return tuple(Prior("truncated_normal", loc=5.0, scale=4.0) for _ in range(dim))
    raise ValueError(f"unknown model family {family!r}")


# ---------------------------------------------------------------- config


@dataclass
class ChainConfig:
    """Settings of a Metropolis-Hastings run.

    ``proposal_cov`` (on log-parameters) skips the pilot when given;
    otherwise a pilot of ``pilot_iter`` iterations starting from
    ``init_scale`` standard deviations estimates it.
    """

    n_iter: int = 2000
    n_chains: int = 3
    proposal_cov: np.ndarray | None = None
    init_scale: float = 0.05
    pilot_iter: int = 2000
    priors: tuple | None = None
    prune: PruneRule = field(default_factory=lambda: PruneRule.fixed_number(10))
    seed: int | None = 0
    init: np.ndarray | None = None
    burn_in: int | None = None
    mh_steps: int = 1

    def __post_init__(self):
        if self.n_iter < 0 or self.pilot_iter < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if self.mh_steps < 1:
            raise ValueError("mh_steps must be positive")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if self.proposal_cov is not None:
            c = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
            if c.shape[0] != c.shape[1] or not np.allclose(c, c.T):
                raise ValueError("proposal covariance must be a symmetric matrix")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise ValueError("proposal covariance must be positive definite") from None
            self.proposal_cov = c

    @property
    def burn(self) -> int:
        return self.n_iter // 4 if self.burn_in is None else int(self.burn_in)


@dataclass
class ChainOutput:
    """Draws of every chain on the natural parameter scale."""

    names: tuple
    draws: np.ndarray  # (n_chains, n_iter + 1, d)
    log_post: np.ndarray  # (n_chains, n_iter + 1)
    accept_rate: np.ndarray  # (n_chains,)
    proposal_cov: np.ndarray
    burn: int = 0
    n_failed: int = 0
    trajectories: np.ndarray | None = None  # (n_chains, n_iter + 1, T + 1) for joint samplers
    seed: object = None

    @property
    def kept(self) -> np.ndarray:
        return self.draws[:, self.burn:, :]

    def rhat(self) -> np.ndarray:
        return split_rhat(self.kept)

    def acf(self, max_lag: int = 50) -> np.ndarray:
        """Chain-averaged autocorrelation, shape ``(d, max_lag + 1)``."""
        k = self.kept
        return np.array([np.mean([acf(k[c, :, j], max_lag) for c in range(k.shape[0])], axis=0)
                         for j in range(k.shape[2])])

    def summary(self) -> dict:
        k = self.kept
        flat = k.reshape(-1, k.shape[2])
        ess = effective_sample_size(k)
        out = {}
        rh = self.rhat() if k.shape[0] >= 2 else np.full(k.shape[2], np.nan)
        for j, name in enumerate(self.names):
            sd = float(np.std(flat[:, j], ddof=1)) if flat.shape[0] > 1 else float("nan")
            out[name] = {
                "mean": float(np.mean(flat[:, j])),
                "sd": sd,
                "q025": float(np.quantile(flat[:, j], 0.025)),
                "q975": float(np.quantile(flat[:, j], 0.975)),
                "ess": float(ess[j]),
                "mcse": sd / math.sqrt(ess[j]) if ess[j] > 0 else float("nan"),
                "rhat": float(rh[j]),
            }
        return out

    def rows(self):
        """Rows ``chain, iter, param..., log_post``."""
        for c in range(self.draws.shape[0]):
            for i in range(self.draws.shape[1]):
                yield [c, i] + [float(v) for v in self.draws[c, i]] + [float(self.log_post[c, i])]


# ------------------------------------------------------------ diagnostics


def acf(x, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of one chain for lags ``0..max_lag``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    v = float(xc @ xc)
    if v == 0.0:
        raise ValueError("autocorrelation of a constant chain is undefined")
    L = min(int(max_lag), n - 1)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[: L + 1] / v
    out = np.full(int(max_lag) + 1, np.nan)
    out[: L + 1] = r
    return out


def split_rhat(draws) -> np.ndarray:
    """Split potential scale reduction factor per parameter.

    ``draws`` has shape ``(n_chains, n, d)`` (or ``(n_chains, n)``) with at
    least two chains.
    """
    d = np.asarray(draws, dtype=float)
    if d.ndim == 2:
        d = d[:, :, None]
    if d.shape[0] < 2:
        raise ValueError("R-hat needs at least two chains")
    n = d.shape[1] // 2
    if n < 2:
        raise ValueError("R-hat needs at least four draws per chain")
    halves = np.concatenate([d[:, :n], d[:, d.shape[1] - n:]], axis=0)
    means = halves.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    if np.any(W == 0):
        raise ValueError("R-hat is undefined for constant chains")
    var_plus = (n - 1) / n * W + B / n
    return np.sqrt(var_plus / W)


def effective_sample_size(draws) -> np.ndarray:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    d = np.asarray(draws, dtype=float)
    if d.ndim == 2:
        d = d[:, :, None]
    m, n, p = d.shape
    out = np.empty(p)
    for j in range(p):
        x = d[:, :, j]
        if n < 4 or np.all(x.var(axis=1) == 0):
            out[j] = float(m * n) if n > 0 else 0.0
            continue
        rho = np.mean([acf(x[c], n - 1) if x[c].var() > 0 else np.r_[1.0, np.zeros(n - 1)]
                       for c in range(m)], axis=0)
        rho = np.nan_to_num(rho)
        pairs = rho[: 2 * ((n - 1) // 2)].reshape(-1, 2).sum(axis=1)
        s = 0.0
        prev = np.inf
        for k, g in enumerate(pairs):
            if g <= 0:
                break
            g = min(g, prev)
            prev = g
            s += g
        tau = max(-1.0 + 2.0 * s, 1.0 / math.log10(max(m * n, 10)))
        out[j] = m * n / tau
    return out


def diagnostics(draws, max_lag: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Split R-hat per parameter and chain-averaged ACF up to ``max_lag``."""
    d = np.asarray(draws, dtype=float)
    if d.ndim == 2:
        d = d[:, :, None]
    rh = split_rhat(d)
    ac = np.array([np.mean([acf(d[c, :, j], max_lag) for c in range(d.shape[0])], axis=0)
                   for j in range(d.shape[2])])
    return rh, ac


# -------------------------------------------------------- generic sampler


def _mh_chain(logtarget, phi0, chol, n_iter, rng, lp0=None):
    """Random-walk chain; returns draws, log targets, acceptances and failures."""
    d = phi0.shape[0]
    phis = np.empty((n_iter + 1, d))
    lps = np.empty(n_iter + 1)
    phi = phi0.copy()
    lp = logtarget(phi) if lp0 is None else lp0
    if not np.isfinite(lp):
        raise ValueError(f"initial state has log target {lp}")
    phis[0], lps[0] = phi, lp
    acc = 0
    failed = 0
    for i in range(1, n_iter + 1):
        prop = phi + chol @ rng.standard_normal(d)
        try:
            lq = logtarget(prop)
        except (ArithmeticError, ValueError, RuntimeError, MemoryError):
            lq = -np.inf
            failed += 1
        if np.log(rng.random()) < lq - lp:
            phi, lp = prop, lq
            acc += 1
        phis[i], lps[i] = phi, lp
    return phis, lps, acc, failed


def _pilot_cov(logtarget, phi0, init_scale, n_pilot, rng):
    """Pilot run with adaptive scaling; returns the frozen covariance and last state."""
    d = phi0.shape[0]
    scale = float(init_scale)
    cov = np.eye(d) * scale ** 2
    phi = phi0.copy()
    lp = logtarget(phi)
    hist = [phi.copy()]
    block = 50
    done = 0
    while done < n_pilot:
        nb = min(block, n_pilot - done)
        chol = np.linalg.cholesky(cov)
        phis, lps, acc, _ = _mh_chain(logtarget, phi, chol, nb, rng, lp0=lp)
        phi, lp = phis[-1], lps[-1]
        hist.extend(phis[1:])
        done += nb
        rate = acc / nb
        scale *= math.exp(rate - 0.3)
        H = np.array(hist[len(hist) // 2:])
        if H.shape[0] > 4 * d and np.all(np.ptp(H, axis=0) > 0):
            cov = scale ** 2 * (np.cov(H.T).reshape(d, d) + 1e-10 * np.eye(d))
        else:
            cov = np.eye(d) * scale ** 2
    H = np.array(hist[len(hist) // 2:])
    if H.shape[0] > d + 1 and np.all(np.ptp(H, axis=0) > 0):
        emp = np.cov(H.T).reshape(d, d)
    else:
        emp = np.eye(d) * init_scale ** 2
    final = (2.38 ** 2 / d) * emp + 1e-12 * np.eye(d)
    return final, np.array(hist)


def rwmh(logtarget, init_phi, cfg: ChainConfig, rng_seq=None):
    """Run ``cfg.n_chains`` random-walk chains on an unconstrained vector.

    Returns ``(draws, log_targets, accept_rates, cov, n_failed)`` with draws
    on the same scale as ``init_phi``.
    """
    phi0 = np.atleast_1d(np.asarray(init_phi, dtype=float))
    d = phi0.shape[0]
    ss = rng_seq if rng_seq is not None else np.random.SeedSequence(cfg.seed)
    child = ss.spawn(cfg.n_chains + 1)
    pilot_rng = np.random.default_rng(child[0])
    if cfg.proposal_cov is not None:
        cov = cfg.proposal_cov
        if cov.shape != (d, d):
            raise ValueError(f"proposal covariance must be {d}x{d}")
        starts = [phi0 + cfg.init_scale * pilot_rng.standard_normal(d) for _ in range(cfg.n_chains)]
    elif cfg.pilot_iter > 0:
        cov, hist = _pilot_cov(logtarget, phi0, cfg.init_scale, cfg.pilot_iter, pilot_rng)
        tail = hist[len(hist) // 2:]
        starts = [tail[pilot_rng.integers(tail.shape[0])] for _ in range(cfg.n_chains)]
    else:
        cov = np.eye(d) * cfg.init_scale ** 2
        starts = [phi0.copy() for _ in range(cfg.n_chains)]
    chol = np.linalg.cholesky(cov)
    draws = np.empty((cfg.n_chains, cfg.n_iter + 1, d))
    lps = np.empty((cfg.n_chains, cfg.n_iter + 1))
    rates = np.empty(cfg.n_chains)
    failed = 0
    for c in range(cfg.n_chains):
        rng = np.random.default_rng(child[c + 1])
        ph, lp, acc, nf = _mh_chain(logtarget, starts[c], chol, cfg.n_iter, rng)
        draws[c], lps[c] = ph, lp
        rates[c] = acc / cfg.n_iter if cfg.n_iter else 0.0
        failed += nf
    if failed:
        warnings.warn(f"{failed} proposals were rejected after likelihood failures", RuntimeWarning,
                      stacklevel=2)
    return draws, lps, rates, cov, failed


# ------------------------------------------------------------ model plumbing


def param_names(family: str, dim: int = 3) -> tuple:
    if family == "cir":
        return ("a", "b", "s")
    if family == "wf":
        return tuple(f"alpha{j + 1}" for j in range(dim))
    raise ValueError(f"unknown model family {family!r}")


def build_model(family: str, psi, lam: float = 1.0):
    """Model from natural parameters: ``(a, b, s)`` for CIR, ``alpha`` for WF."""
    psi = np.asarray(psi, dtype=float)
    if family == "cir":
        return CirModel(CirParams.from_natural(*psi, lam=lam))
    if family == "wf":
        return WfModel(WfParams(tuple(psi)))
    raise ValueError(f"unknown model family {family!r}")


def default_init(series: ObservationSeries, family: str, lam: float = 1.0) -> np.ndarray:
    """Crude moment-based starting point."""
    tot = series.totals()
    if family == "cir":
        n = np.array([c.shape[0] for c in series.counts])
        mean = float(np.sum(tot[:, 0]) / np.sum(n)) / lam
        return np.array([1.0, max(mean, 0.1), 1.0])
    if family == "wf":
        return np.ones(tot.shape[1])
    raise ValueError(f"unknown model family {family!r}")


def log_prior(priors, psi) -> float:
    return float(sum(p.logpdf(v) for p, v in zip(priors, psi)))


def rwmh_marginal(series: ObservationSeries, family: str, cfg: ChainConfig, lam: float = 1.0,
                  loglik_fn=None) -> ChainOutput:
    """Posterior draws of the model parameters using the (pruned) likelihood.

    ``loglik_fn(psi)`` overrides the likelihood (used to test the sampler
    against known targets).
    """
    dim = series.counts[0].shape[1]
    priors = cfg.priors or default_priors(family, dim)
    names = param_names(family, dim)
    if len(priors) != len(names):
        raise ValueError(f"need {len(names)} priors, got {len(priors)}")
    init = np.asarray(cfg.init if cfg.init is not None else default_init(series, family, lam), dtype=float)
    if np.any(init <= 0):
        raise ValueError("initial parameters must be positive")

    def ll(psi):
        if loglik_fn is not None:
            return float(loglik_fn(psi))
        return loglik(series, build_model(family, psi, lam), cfg.prune)

    def logtarget(phi):
        psi = np.exp(phi)
        lp = log_prior(priors, psi)
        if not np.isfinite(lp):
            return -np.inf
        return lp + float(np.sum(phi)) + ll(psi)

    draws, lps, rates, cov, failed = rwmh(logtarget, np.log(init), cfg)
    return ChainOutput(names, np.exp(draws), lps, rates, cov, min(cfg.burn, cfg.n_iter), failed,
                       seed=cfg.seed)


# ------------------------------------------------------ joint CIR sampler


def cir_path_loglik(model: CirModel, series: ObservationSeries, x) -> float:
    """``log p(x_{0:T}, y_{0:T} | psi)`` for a path on the observation grid."""
    x = np.asarray(x, dtype=float).ravel()
    out = float(model.log_pi_density(x[0]))
    if x.size > 1:
        dts = np.diff(series.times)
        for dt in np.unique(np.round(dts, 12)):
            sel = np.nonzero(np.isclose(dts, dt, rtol=0, atol=1e-12))[0]
            out += float(np.sum(model.log_transition_density(x[sel], x[sel + 1], float(dts[sel[0]]))))
    tot = series.totals()[:, 0]
    n = np.array([c.shape[0] for c in series.counts])
    const = sum(float(gammaln(c + 1.0).sum()) for c in series.counts)
    lam = model.params.lam
    return out + float(np.sum(xlogy(tot, lam * x) - n * lam * x)) - const


def gibbs_joint_cir(series: ObservationSeries, cfg: ChainConfig, lam: float = 1.0,
                    family: str = "cir") -> ChainOutput:
    """Metropolis-within-Gibbs over the signal path and ``(a, b, s)``.

    Each sweep draws a path from the joint smoothing law given the current
    parameters (filtering pruned by ``cfg.prune``), then performs
    ``cfg.mh_steps`` random-walk updates of the log-parameters targeting
    ``prior x p(x_{0:T}, y | psi)``, evaluated with the Bessel transition
    density.
    """
    if family != "cir":
        raise NotImplementedError("the joint trajectory-parameter sampler needs a transition "
                                  "density and is only available for the CIR model")
    if series.counts[0].shape[1] != 1:
        raise ValueError("CIR data have a single count column")
    priors = cfg.priors or default_priors("cir")
    names = param_names("cir")
    init = np.asarray(cfg.init if cfg.init is not None else default_init(series, "cir", lam), dtype=float)
    ss = np.random.SeedSequence(cfg.seed)
    child = ss.spawn(cfg.n_chains + 1)
    d = 3

    def path_target(phi, x):
        psi = np.exp(phi)
        lp = log_prior(priors, psi)
        if not np.isfinite(lp):
            return -np.inf
        return lp + float(np.sum(phi)) + cir_path_loglik(build_model("cir", psi, lam), series, x)

    filt_cache: dict = {}

    def draw_path(phi, rng):
        key = tuple(phi)
        fo = filt_cache.get(key)
        if fo is None:
            fo = cir_filter_compact(series, build_model("cir", np.exp(phi), lam), cfg.prune)
            filt_cache.clear()
            filt_cache[key] = fo
        return sample_joint_cir(fo, build_model("cir", np.exp(phi), lam), 1, rng).states[0, :, 0]

    def sweep_chain(phi, x, chol, n, rng):
        T1 = len(series)
        phis = np.empty((n + 1, d))
        lps = np.empty(n + 1)
        xs = np.empty((n + 1, T1))
        lp = path_target(phi, x)
        phis[0], lps[0], xs[0] = phi, lp, x
        acc = 0
        failed = 0
        for i in range(1, n + 1):
            x = draw_path(phi, rng)
            lp = path_target(phi, x)
            for _ in range(cfg.mh_steps):
                prop = phi + chol @ rng.standard_normal(d)
                try:
                    lq = path_target(prop, x)
                except (ArithmeticError, ValueError, RuntimeError):
                    lq = -np.inf
                    failed += 1
                if np.log(rng.random()) < lq - lp:
                    phi, lp = prop, lq
                    acc += 1
            phis[i], lps[i], xs[i] = phi, lp, x
        return phis, lps, xs, acc, failed

    pilot_rng = np.random.default_rng(child[0])
    phi0 = np.log(init)
    x0 = draw_path(phi0, pilot_rng)
    if cfg.proposal_cov is not None:
        cov = cfg.proposal_cov
        starts = [(phi0 + cfg.init_scale * pilot_rng.standard_normal(d), x0) for _ in range(cfg.n_chains)]
    elif cfg.pilot_iter > 0:
        scale = cfg.init_scale
        phi, x = phi0, x0
        hist = []
        done = 0
        cov = np.eye(d) * scale ** 2
        while done < cfg.pilot_iter:
            nb = min(50, cfg.pilot_iter - done)
            ph, _, xs, acc, _ = sweep_chain(phi, x, np.linalg.cholesky(cov), nb, pilot_rng)
            phi, x = ph[-1], xs[-1]
            hist.extend(zip(ph[1:], xs[1:]))
            done += nb
            scale *= math.exp(acc / (nb * cfg.mh_steps) - 0.3)
            H = np.array([h[0] for h in hist[len(hist) // 2:]])
            if H.shape[0] > 4 * d and np.all(np.ptp(H, axis=0) > 0):
                cov = scale ** 2 * (np.cov(H.T) + 1e-10 * np.eye(d))
            else:
                cov = np.eye(d) * scale ** 2
        tail = hist[len(hist) // 2:]
        H = np.array([h[0] for h in tail])
        emp = np.cov(H.T) if np.all(np.ptp(H, axis=0) > 0) else np.eye(d) * cfg.init_scale ** 2
        # the history spread reflects the marginal posterior, much wider than the
        # conditional given a path, so keep the pilot's tuned scale
        cov = scale ** 2 * emp + 1e-12 * np.eye(d)
        starts = [tail[pilot_rng.integers(len(tail))] for _ in range(cfg.n_chains)]
    else:
        cov = np.eye(d) * cfg.init_scale ** 2
        starts = [(phi0, x0) for _ in range(cfg.n_chains)]
    chol = np.linalg.cholesky(cov)
    T1 = len(series)
    draws = np.empty((cfg.n_chains, cfg.n_iter + 1, d))
    lps = np.empty((cfg.n_chains, cfg.n_iter + 1))
    paths = np.empty((cfg.n_chains, cfg.n_iter + 1, T1))
    rates = np.empty(cfg.n_chains)
    failed = 0
    for c in range(cfg.n_chains):
        rng = np.random.default_rng(child[c + 1])
        ph, lp, xs, acc, nf = sweep_chain(starts[c][0], starts[c][1], chol, cfg.n_iter, rng)
        draws[c], lps[c], paths[c] = ph, lp, xs
        rates[c] = acc / (cfg.n_iter * cfg.mh_steps) if cfg.n_iter else 0.0
        failed += nf
    if failed:
        warnings.warn(f"{failed} proposals were rejected after density failures", RuntimeWarning,
                      stacklevel=2)
    return ChainOutput(names, np.exp(draws), lps, rates, cov, min(cfg.burn, cfg.n_iter), failed,
                       trajectories=paths, seed=cfg.seed)
