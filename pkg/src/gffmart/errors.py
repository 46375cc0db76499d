"""Exception types raised across the package."""


class GffmartError(Exception):
    """Base class for package errors."""


class DomainError(GffmartError, ValueError):
    """A point or ball lies outside the admissible region."""


class ParameterError(GffmartError, ValueError):
    """A numerical parameter is out of its allowed range."""


class ConfigurationError(GffmartError, ValueError):
    """Inconsistent or unsupported configuration."""


class NumericalError(GffmartError, ArithmeticError):
    """A factorization or quadrature failed to meet its contract."""


class CalibrationError(NumericalError):
    """Empirical constant calibration did not fit within tolerance."""


class BudgetExceeded(GffmartError, RuntimeError):
    """Requested work exceeds the configured budget."""
