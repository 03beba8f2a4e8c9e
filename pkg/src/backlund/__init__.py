"""Classical and stochastic Backlund transformations for rank-one Toda and Calogero-Moser systems."""

from .errors import (BoundaryBreach, ConvergenceError, DomainError, HypothesisError, RangeError,
                     StepError)
from .systems import Kind, PhasePoint, SystemSpec, hyperbolic1, hyperbolic2, rational, toda

__all__ = [
    "BoundaryBreach", "ConvergenceError", "DomainError", "HypothesisError", "RangeError",
    "StepError", "Kind", "PhasePoint", "SystemSpec", "hyperbolic1", "hyperbolic2", "rational",
    "toda",
]
__version__ = "0.1.0"
