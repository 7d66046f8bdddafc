"""Batched stochastic matching bandits under MNL choice feedback."""
from .mnl import (Assortment, Instance, Matching, choice_probs, expected_revenue,
                  kappa_lower_bound, project_features, total_revenue)
from .environment import Environment, generate_instance, oracle_matching
from .algorithms import AlgoConfig, RunTrace, run

__all__ = ["Assortment", "Instance", "Matching", "choice_probs", "expected_revenue",
           "kappa_lower_bound", "project_features", "total_revenue", "Environment",
           "generate_instance", "oracle_matching", "AlgoConfig", "RunTrace", "run"]
