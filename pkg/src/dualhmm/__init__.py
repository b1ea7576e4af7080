"""Exact filtering, smoothing and likelihood for hidden Markov models with death-process duals.

Two model families are provided: a Cox-Ingersoll-Ross signal with Poisson
counts (:class:`CirModel`) and a K-type Wright-Fisher signal with
multinomial counts (:class:`WfModel`).  Filtering, prediction, smoothing and
likelihood are finite mixture recursions over a grid of dual indices; see
:func:`run_filter`, :func:`run_smoother` and :func:`loglik`.
"""

from .cir import CirModel, CirParams
from .inference import (FilterOutput, PruneRule, cost_to_go_recursion, loglik, marginal_smooth, predict,
                        prior_mixture, prune, run_filter, run_smoother, update, update_block)
from .kernels import BACKEND
from .mcmc import ChainConfig, ChainOutput, Prior, gibbs_joint_cir, rwmh_marginal
from .metrics import DirichletMixture, GammaMixture, l2_distance
from .model import CostToGo, ObservationSeries, WeightedMixture, mixture_mean, mixture_quantile
from .particle import bootstrap_pf, ffbs_particle_smoother, gamma_kde
from .simulate import simulate
from .trajectory import TrajectorySet, sample_joint_cir, sample_joint_wf
from .wf import WfModel, WfParams

__all__ = [
    "BACKEND", "ChainConfig", "ChainOutput", "CirModel", "CirParams", "CostToGo", "DirichletMixture",
    "FilterOutput", "GammaMixture", "ObservationSeries", "Prior", "PruneRule", "TrajectorySet",
    "WeightedMixture", "WfModel", "WfParams", "bootstrap_pf", "cost_to_go_recursion", "ffbs_particle_smoother",
    "gamma_kde", "gibbs_joint_cir", "l2_distance", "loglik", "marginal_smooth", "mixture_mean",
    "mixture_quantile", "predict", "prior_mixture", "prune", "run_filter", "run_smoother", "rwmh_marginal",
    "sample_joint_cir", "sample_joint_wf", "simulate", "update", "update_block",
]
