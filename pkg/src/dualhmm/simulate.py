"""Synthetic data: exact signal paths and their emissions."""

from __future__ import annotations

import numpy as np

from .model import ModelContract, ObservationSeries


def simulate(model: ModelContract, times, n_obs, rng, x0=None):
    """Exact latent path on ``times`` and conditionally independent counts.

    Parameters
    ----------
    times : array_like
        Strictly increasing observation times.
    n_obs : int or array_like
        Number of count vectors drawn at each time.
    x0 : optional
        Initial state; drawn from the stationary law when omitted.

    Returns
    -------
    states : ndarray (T+1, d)
    series : ObservationSeries
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("need a nonempty 1-d array of times")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    n_obs = np.broadcast_to(np.asarray(n_obs, dtype=np.int64), times.shape)
    if np.any(n_obs < 1):
        raise ValueError("need at least one observation per time")
    x = model.sample_stationary(rng) if x0 is None else np.asarray(x0, dtype=float)
    states = []
    counts = []
    for i, t in enumerate(times):
        if i > 0:
            x = model.exact_transition_sample(x, float(t - times[i - 1]), rng)
        states.append(np.atleast_1d(x).astype(float))
        counts.append(np.asarray(model.sample_emission(x, int(n_obs[i]), rng), dtype=np.int64))
    return np.array(states), ObservationSeries(times, tuple(counts))
