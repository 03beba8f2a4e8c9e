"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the open domain of the system."""


class RangeError(ValueError):
    """A spectral parameter is outside the range where the object exists."""


class ConvergenceError(RuntimeError):
    """Quadrature refinement failed to stabilise."""


class StepError(RuntimeError):
    """An integrator stage left the domain."""


class BoundaryBreach(RuntimeError):
    """Discretised SDE paths left the domain while running in strict mode."""


class HypothesisError(ValueError):
    """Parameters violate the hypotheses of the law or construction being tested."""
