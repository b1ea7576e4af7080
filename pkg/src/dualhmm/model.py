"""Model contract for dual-process hidden Markov models and shared data types.

A model supplies the signal's stationary density, the duality functions
``h(x, m, theta)``, the conjugate update maps ``t`` and ``T``, the
deterministic flow ``theta_flow`` of the dual parameter, the marginal
likelihood of a datum given a mixture component, and the death-process
transition of the dual.  All densities are on the log scale.
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .death import TransitionRow
from .grid import as_index_set, logsumexp
from . import kernels


class ModelContract(ABC):
    """Interface every dual-process model implements.

    Vectorized methods take ``m`` as an ``(n, K)`` integer array and return
    one value per row.
    """

    #: dimension K of the dual index
    dim: int
    #: name used in configs and output files
    family: str

    @property
    @abstractmethod
    def theta0(self):
        """Dual parameter for which ``h(x, 0, theta0) = 1``."""

    @abstractmethod
    def log_pi_density(self, x): ...

    @abstractmethod
    def log_h(self, x, m, theta): ...

    def update_t(self, y, m):
        """Index map ``t(y, m) = m + y``."""
        return np.asarray(m, dtype=np.int64) + np.asarray(y, dtype=np.int64)

    @abstractmethod
    def update_T(self, y, theta): ...

    @abstractmethod
    def theta_flow(self, dt, theta): ...

    @abstractmethod
    def log_marginal(self, m, theta, y) -> np.ndarray:
        """``log mu_{m, theta}(y)`` for every row of ``m``."""

    @abstractmethod
    def death_row(self, m, dt, theta) -> TransitionRow: ...

    def hstab_d(self, m1, m2):
        return np.asarray(m1, dtype=np.int64) + np.asarray(m2, dtype=np.int64)

    @abstractmethod
    def hstab_e(self, theta1, theta2): ...

    @abstractmethod
    def log_hstab_C(self, m1, m2, theta1, theta2) -> np.ndarray: ...

    @abstractmethod
    def log_component_density(self, x, m, theta) -> np.ndarray: ...

    @abstractmethod
    def sample_component(self, m, theta, rng, size=None): ...

    @abstractmethod
    def component_mean(self, m, theta) -> np.ndarray:
        """Mean of every component, shape ``(n, d)`` with ``d`` the signal dimension."""

    @abstractmethod
    def log_emission(self, y, x) -> np.ndarray:
        """``log f_x(y)`` for an observation row ``y`` at signal points ``x``."""

    @abstractmethod
    def sample_emission(self, x, n_obs: int, rng) -> np.ndarray: ...

    @abstractmethod
    def sample_stationary(self, rng, size=None): ...

    @abstractmethod
    def exact_transition_sample(self, x0, dt, rng): ...

    def pushforward(self, indices, log_w, dt, theta):
        """Predicted support and log-weights ``sum_{m >= n} w_m p_{m,n}(dt; theta)``.

        The default evaluates every death row explicitly; models override it
        with the vectorized kernels.
        """
        acc = {}
        for m, lw in zip(indices, log_w):
            row = self.death_row(m, dt, theta)
            for n, lp in zip(row.indices, row.log_probs):
                acc.setdefault(tuple(n), []).append(lw + lp)
        target = as_index_set(list(acc.keys()), dim=self.dim)
        return target, np.array([logsumexp(acc[tuple(n)]) for n in target])


# ----------------------------------------------------------------- data types


@dataclass(frozen=True)
class WeightedMixture:
    """Normalized mixture ``sum_m w_m g(x, m, theta)`` at one time."""

    indices: np.ndarray
    log_weights: np.ndarray
    theta: object
    time: float = 0.0

    def __post_init__(self):
        if self.indices.shape[0] != self.log_weights.shape[0]:
            raise ValueError("indices and weights must align")

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def to_dict(self) -> dict:
        return {
            "time": float(self.time),
            "theta": None if self.theta is None else float(self.theta),
            "indices": self.indices.tolist(),
            "log_weights": [None if not np.isfinite(v) else float(v) for v in self.log_weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedMixture":
        idx = np.asarray(d["indices"], dtype=np.int64)
        lw = np.array([-np.inf if v is None else float(v) for v in d["log_weights"]])
        return cls(idx.reshape(len(lw), -1), lw, d["theta"], d["time"])


@dataclass(frozen=True)
class CostToGo:
    """Unnormalized ``sum_m c_m h(x, m, theta)`` representing ``p(y_{i+1:T} | x_i)``."""

    indices: np.ndarray
    log_coeffs: np.ndarray
    theta: object
    time: float = 0.0

    def __len__(self) -> int:
        return self.indices.shape[0]

    def log_evaluate(self, x, model: ModelContract) -> float:
        """``log p(y_{i+1:T} | x)`` at a single signal point."""
        return float(logsumexp(self.log_coeffs + model.log_h(x, self.indices, self.theta)))


@dataclass(frozen=True)
class ObservationSeries:
    """Observation times with one or more count vectors per time."""

    times: np.ndarray
    counts: tuple  # one (n_obs_i, D) int array per time

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.counts):
            raise ValueError("times and counts must align")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be strictly increasing")
        for c in self.counts:
            if c.ndim != 2 or c.shape[0] < 1:
                raise ValueError("each time needs at least one count vector")
            if np.any(c < 0):
                raise ValueError("counts must be nonnegative")

    @classmethod
    def from_rows(cls, times, rows) -> "ObservationSeries":
        """Group per-observation rows by (consecutive equal) time, keeping file order."""
        times = np.asarray(times, dtype=float)
        rows = np.asarray(rows)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        if np.any(np.mod(rows, 1) != 0):
            raise ValueError("counts must be integers")
        rows = rows.astype(np.int64)
        if len(times) == 0:
            raise ValueError("empty observation series")
        if np.any(np.diff(times) < 0):
            raise ValueError("observation times must be nondecreasing in the file")
        uniq, start = np.unique(times, return_index=True)
        bounds = list(start) + [len(times)]
        counts = tuple(rows[bounds[i]:bounds[i + 1]] for i in range(len(uniq)))
        return cls(uniq, counts)

    @classmethod
    def from_csv(cls, path) -> "ObservationSeries":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "time" or len(header) < 2:
                raise ValueError(f"{path}: header must be time,y1[,y2,...]")
            times, rows = [], []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    times.append(float(rec[0]))
                    vals = [float(v) for v in rec[1:]]
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                if any(v < 0 or v != math.floor(v) for v in vals):
                    raise ValueError(f"{path}:{lineno}: counts must be nonnegative integers")
                rows.append(vals)
        return cls.from_rows(times, np.array(rows).reshape(len(rows), len(header) - 1))

    def to_csv(self, path) -> None:
        D = self.counts[0].shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"y{j + 1}" for j in range(D)])
            for t, c in zip(self.times, self.counts):
                for row in c:
                    w.writerow([repr(float(t))] + [int(v) for v in row])

    def __len__(self) -> int:
        return len(self.times)

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)

    def totals(self) -> np.ndarray:
        """Per-time summed count vectors, shape ``(T+1, D)``."""
        return np.array([c.sum(axis=0) for c in self.counts])

    def subset(self, stop: int) -> "ObservationSeries":
        """The first ``stop`` observation times."""
        return ObservationSeries(self.times[:stop], self.counts[:stop])


# --------------------------------------------------------------- summaries


def mixture_mean(mix: WeightedMixture, model: ModelContract) -> np.ndarray:
    """Mean of the mixture in signal space."""
    return mix.weights @ model.component_mean(mix.indices, mix.theta)


def mixture_quantile(mix: WeightedMixture, q: float, model, coord: int = 0, tol: float = 1e-8) -> float:
    """Quantile of one signal coordinate under a mixture, by bisection.

    CIR components are gamma laws; for Wright-Fisher the coordinate ``j``
    of ``Dir(alpha + n)`` is ``Beta(alpha_j + n_j, |alpha| + |n| - alpha_j - n_j)``.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    from scipy.special import betainc, gammainc
    w = mix.weights
    if model.family == "cir":
        if coord != 0:
            raise ValueError("the CIR signal has a single coordinate")
        shape = model.component_shape(mix.indices)
        rate = float(mix.theta)

        def cdf(x):
            return float(w @ gammainc(shape, rate * x))

        hi = 1.0
        while cdf(hi) < q:
            hi *= 2.0
    else:
        if not 0 <= coord < model.dim:
            raise ValueError(f"coordinate {coord} out of range")
        a = model.alpha[coord] + mix.indices[:, coord]
        b = model.total + mix.indices.sum(axis=1) - a

        def cdf(x):
            return float(w @ betainc(a, b, x))

        hi = 1.0
    lo = 0.0
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mixture_quantile_1d(mix: WeightedMixture, q: float, model, tol: float = 1e-8) -> float:
    """Quantile of a one-dimensional gamma mixture by bisection."""
    if model.dim != 1:
        raise ValueError("quantiles are only defined for scalar signals")
    return mixture_quantile(mix, q, model, 0, tol)


def verify_duality(model: ModelContract, x, m, theta, t: float, n_paths: int, rng):
    """Monte Carlo check of ``E^x[h(X_t, m, theta)] = sum_n p_{m,n}(t) h(x, n, Theta_t)``.

    Returns
    -------
    mc_estimate, dual_sum, z_score
    """
    m = np.atleast_1d(np.asarray(m, dtype=np.int64))
    x = np.asarray(x, dtype=float)
    x0 = np.full(n_paths, float(x)) if x.ndim == 0 else np.tile(x, (n_paths, 1))
    xs = model.exact_transition_sample(x0, t, rng)
    vals = np.exp(model.log_h(xs, m[None, :], theta))
    mc = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else float("inf")
    row = model.death_row(m, t, theta)
    theta_t = model.theta_flow(t, theta)
    dual = float(np.sum(row.probs * np.exp(model.log_h(x, row.indices, theta_t))))
    if se == 0.0:
        z = 0.0 if mc == dual else float("inf")
    else:
        z = (mc - dual) / se
    return mc, dual, z
