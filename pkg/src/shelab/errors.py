"""Exception hierarchy shared by every module.

Two families map onto the command-line exit codes: a :class:`ValidationError`
means the inputs describe an object that does not satisfy the required
hypotheses (exit 2), a :class:`ConfigurationError` means the run itself is
malformed or under-resolved (exit 3).
"""

from __future__ import annotations


class ShelabError(Exception):
    """Base class for all package errors."""


class ValidationError(ShelabError, ValueError):
    """An input object fails a mathematical requirement."""


class InvalidMollifierError(ValidationError):
    """The mollifier is not a normalized even bump, or its self-convolution reaches 1 at the origin."""


class UnsupportedOrderError(ValidationError):
    """A derivative order above the supported maximum was requested."""


class FactorizationError(ShelabError, ArithmeticError):
    """A covariance matrix was not positive definite to working precision."""


class ConfigurationError(ShelabError, ValueError):
    """A run configuration is inconsistent or cannot be executed."""


class ResolutionError(ConfigurationError):
    """A grid or time step is too coarse for the kernel it must resolve."""


class EmptySuiteError(ConfigurationError):
    """A verification suite contains no tests."""
