"""Straggler-tolerant hierarchical federated learning on a simulated
consortium ledger, with a latency model and an edge-round optimizer."""

from .core import Topology, axpy, weighted_mean
from .hieavg import DecayParams, SubmissionHistory, decay_factor, estimate_delayed
from .simulation import Simulation
from .config import ExperimentConfig, load_config
from .harness import compare_aggregators, run_experiment

__all__ = [
    "Topology", "axpy", "weighted_mean",
    "DecayParams", "SubmissionHistory", "decay_factor", "estimate_delayed",
    "Simulation", "ExperimentConfig", "load_config",
    "compare_aggregators", "run_experiment",
]

__version__ = "0.1.0"
