"""Shuffle-Exchange SGD with ring allreduce collectives in a deterministic network simulator."""

__version__ = "0.1.0"

from .algorithms import SimTrace, final_global_average, run_training
from .collectives import RingGroup, ring_allreduce_mean, slice_bounds
from .core import ConfigError, NetworkConfig, NumericalError, Rng64, TrainConfig, vec_axpy
from .netsim import LayerProfile, LinkModel, load_profile, simulate_overlapped_iteration, simulate_ring_allreduce
from .shuffle import generate_groups, pair_split_probability

__all__ = [
    "ConfigError", "LayerProfile", "LinkModel", "NetworkConfig", "NumericalError", "RingGroup",
    "Rng64", "SimTrace", "TrainConfig", "final_global_average", "generate_groups", "load_profile",
    "pair_split_probability", "ring_allreduce_mean", "run_training", "simulate_overlapped_iteration",
    "simulate_ring_allreduce", "slice_bounds", "vec_axpy",
]
