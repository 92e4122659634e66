"""Deterministic desk-scale federated learning simulator for mixer-family models."""

from . import ops  # noqa: F401  (attaches Tensor operators)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FedmixError,
    UsageError,
)
from .tensor import Graph, Tensor, backward, no_grad

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "no_grad",
    "FedmixError",
    "DimensionError",
    "ContractError",
    "ConfigError",
    "DataError",
    "UsageError",
]

__version__ = "0.1.0"
