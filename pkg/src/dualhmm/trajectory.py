"""Draws from the joint smoothing distribution ``p(x_{0:T} | y_{0:T})``.

CIR uses a backward decomposition: ``x_T`` is drawn from the last filtering
mixture and each ``x_i`` given ``x_{i+1}`` from the exact backward kernel,
a gamma mixture over a double index ``(k, m)``.  The Wright-Fisher model
uses a forward decomposition: ``x_0`` from the smoothing mixture at time 0
and then the forward kernel driven by the cost-to-go functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .grid import logsumexp
from .cir import CirModel
from .inference import FilterOutput, marginal_smooth, update_block, prior_mixture
from .model import ObservationSeries, WeightedMixture
from .wf import WfModel

MAX_TERMS = 1_000_000


@dataclass(frozen=True)
class Trajectory:
    """One sampled signal path on the observation grid."""

    times: np.ndarray
    states: np.ndarray  # (T+1, d)
    seed: object = None


@dataclass(frozen=True)
class TrajectorySet:
    """``n`` trajectories stored as one ``(n, T+1, d)`` array."""

    times: np.ndarray
    states: np.ndarray
    seed: object = None

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.times, self.states[i], self.seed)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def to_rows(self):
        """Rows ``traj_id, time, x1[, ..., xK]``."""
        for j in range(len(self)):
            for t, x in zip(self.times, self.states[j]):
                yield [j, float(t)] + [float(v) for v in x]


def sample_mixture(mix: WeightedMixture, model, n: int, rng) -> np.ndarray:
    """``n`` independent draws from a normalized mixture."""
    p = mix.weights
    comp = rng.choice(len(mix), size=n, p=p / p.sum())
    return np.asarray(model.sample_component(mix.indices[comp], mix.theta, rng))


# ----------------------------------------------------------------- CIR


def predictive_log_density(model: CirModel, pred: WeightedMixture, x) -> np.ndarray:
    """``log`` of the predictive mixture density at the points ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sh = model.component_shape(pred.indices)
    th = float(pred.theta)
    base = pred.log_weights + sh * np.log(th) - gammaln(sh)
    out = np.empty(x.shape[0])
    step = max(1, 2_000_000 // len(pred))
    for s in range(0, x.shape[0], step):
        lx = np.log(x[s:s + step])
        out[s:s + step] = logsumexp(base[None, :] + (sh[None, :] - 1.0) * lx[:, None], axis=1) - th * x[s:s + step]
    return out


def cir_backward_step(x_next, filt: WeightedMixture, pred_next: WeightedMixture, dt: float,
                      model: CirModel, rng) -> np.ndarray:
    """Draw ``x_i`` given ``x_{i+1}`` for each entry of ``x_next``.

    The double index ``(k, m)`` has probability
    ``w_m NB(k; m) Ga(x_next; k) / nu(x_next)`` with ``nu`` the predictive
    density.  It is drawn by inverse CDF in lexicographic order with one
    uniform per draw: ``k`` is enumerated upwards using the row sums over
    ``m`` (which do not depend on ``x_next``), and ``m`` is located from
    the residual of the same uniform within row ``k``.  Then
    ``x_i ~ Ga(delta/2 + m + k, theta_i + Theta')``.
    """
    x_next = np.atleast_1d(np.asarray(x_next, dtype=float))
    if not np.all(x_next > 0):
        raise ValueError("backward step needs positive x_next")
    g2 = 2.0 * model.params.gamma * dt
    tp = model.theta0 / math.expm1(g2)
    th = float(filt.theta)
    m = filt.indices[:, 0]
    k, pos = kernels.backend().cir_backward_indices(
        x_next, rng.random(x_next.shape[0]), model.shape0 + pred_next.indices[:, 0].astype(float),
        np.ascontiguousarray(pred_next.log_weights, dtype=float), float(pred_next.theta),
        model.shape0 + m.astype(float), np.ascontiguousarray(filt.log_weights, dtype=float),
        th, tp, model.theta0 / -math.expm1(-g2), float(model.shape0), MAX_TERMS)
    return rng.gamma(model.shape0 + m[pos] + k, 1.0 / (th + tp))


def sample_joint_cir(fo: FilterOutput, model: CirModel, n_traj: int, rng, seed=None) -> TrajectorySet:
    """Independent joint-smoothing trajectories from a stored CIR filter pass."""
    times = fo.times
    T = len(times) - 1
    if n_traj < 0:
        raise ValueError("n_traj must be nonnegative")
    states = np.empty((n_traj, T + 1, 1))
    if n_traj == 0:
        return TrajectorySet(times, states, seed)
    x = sample_mixture(fo.filtering[T], model, n_traj, rng)
    states[:, T, 0] = x
    for i in range(T - 1, -1, -1):
        dt = float(times[i + 1] - times[i])
        x = cir_backward_step(x, fo.filtering[i], fo.predictive[i + 1], dt, model, rng)
        states[:, i, 0] = x
    return TrajectorySet(times, states, seed)


# ------------------------------------------------------------------ WF


def sample_joint_wf(series: ObservationSeries, model: WfModel, ctgs: list, rng, n_traj: int = 1,
                    seed=None) -> TrajectorySet:
    """Forward-sampled Wright-Fisher trajectories.

    ``ctgs[i]`` is the cost-to-go ``p(y_{i+1:T} | x_i)`` (see
    :func:`dualhmm.inference.cost_to_go_recursion`).  ``x_0`` is drawn from
    the smoothing mixture at time 0.
    """
    if len(ctgs) != len(series):
        raise ValueError("need one cost-to-go per observation time")
    times = np.asarray(series.times, dtype=float)
    K = model.dim
    states = np.empty((n_traj, len(times), K))
    if n_traj == 0:
        return TrajectorySet(times, states, seed)
    filt0, _ = update_block(prior_mixture(model, float(times[0])), series.counts[0], model)
    sm0 = marginal_smooth(filt0, ctgs[0], model)
    x = sample_mixture(sm0, model, n_traj, rng)
    states[:, 0] = x
    for i in range(1, len(times)):
        dt = float(times[i] - times[i - 1])
        kern = model.forward_kernel(series.counts[i], ctgs[i], dt)
        x = kern.sample_batch(x, rng)
        states[:, i] = x
    return TrajectorySet(times, states, seed)
