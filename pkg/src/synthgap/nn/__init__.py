"""Minimal dense network core with dual-statistics batch normalization."""
from .layers import (
    DenseLayer,
    DomainTag,
    DualBatchNorm,
    Layer,
    Mode,
    Relu,
    RunningStats,
    Tanh,
    replay_running_stats,
)
from .network import Network, average_parameters
from .optim import Adam, SgdMomentum, make_optimizer
from .checkpoint import (
    SCHEMA_VERSION,
    build_network,
    load_checkpoint,
    network_from_dict,
    network_to_dict,
    save_checkpoint,
)

__all__ = [
    "DenseLayer",
    "DomainTag",
    "DualBatchNorm",
    "Layer",
    "Mode",
    "Relu",
    "RunningStats",
    "Tanh",
    "replay_running_stats",
    "Network",
    "average_parameters",
    "Adam",
    "SgdMomentum",
    "make_optimizer",
    "SCHEMA_VERSION",
    "build_network",
    "load_checkpoint",
    "network_from_dict",
    "network_to_dict",
    "save_checkpoint",
]
