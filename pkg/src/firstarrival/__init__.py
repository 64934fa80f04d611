"""Hierarchical max-infinitely divisible spatial model for fields of first-arrival dates."""

__version__ = "0.1.0"

from .errors import (ConfigError, DataError, DomainError, FactorizationError,  # noqa: E402
                     FirstArrivalError, QuadratureError, SamplerError)

__all__ = [
    "__version__",
    "FirstArrivalError",
    "DomainError",
    "QuadratureError",
    "FactorizationError",
    "SamplerError",
    "ConfigError",
    "DataError",
]
