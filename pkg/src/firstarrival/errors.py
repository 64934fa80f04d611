"""Exception types shared across the package."""


class FirstArrivalError(Exception):
    """Base class for every error raised by this package."""


class DomainError(FirstArrivalError, ValueError):
    """An argument lies outside the domain of the operation."""


class QuadratureError(FirstArrivalError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message, estimate=None, abserr=None):
        super().__init__(message)
        self.estimate = estimate
        self.abserr = abserr


class FactorizationError(FirstArrivalError, ArithmeticError):
    """A covariance matrix could not be factorized even after jitter escalation."""


class SamplerError(FirstArrivalError, RuntimeError):
    """A sampler or MCMC chain could not proceed."""


class ConfigError(FirstArrivalError, ValueError):
    """Configuration failed validation.

    ``violations`` lists every problem found, not only the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DataError(FirstArrivalError, ValueError):
    """Input data files are malformed or inconsistent."""
