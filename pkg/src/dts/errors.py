"""Exception types shared across the package."""


class DtsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DtsError, ValueError):
    """Invalid schedule, sampler, or benchmark configuration."""


class StepOvershootError(DtsError, ValueError):
    """A DDIM step would move past timestep 0."""


class NumericError(DtsError, ArithmeticError):
    """A predictor or update produced non-finite values."""


class DomainError(DtsError, ValueError):
    """An argument lies outside the domain of the operation."""


class ComparisonError(DtsError, ValueError):
    """Two run reports cannot be compared (different schedule, predictor or dimension)."""
