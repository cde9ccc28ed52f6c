"""Stackelberg-Nash boundary control of the 1-D wave equation on a domain
with a linearly moving endpoint."""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    InstabilityError,
    NonConvergence,
    ShapeError,
    StackwaveError,
)
from .geometry import BoundaryPartition, MovingDomain, build_partition
from .spaces import GridSpec, SpatialMetric, build_metric
from .wavesolver import ControlTrace, Field, TerminalState

__all__ = [
    "BoundaryPartition",
    "ConfigError",
    "ContractError",
    "ControlTrace",
    "DomainError",
    "Field",
    "GridSpec",
    "InstabilityError",
    "MovingDomain",
    "NonConvergence",
    "ShapeError",
    "SpatialMetric",
    "StackwaveError",
    "TerminalState",
    "build_metric",
    "build_partition",
]

__version__ = "0.1.0"
