"""Exception hierarchy shared across the package."""


class FunmixError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(FunmixError, ValueError):
    """A basis, domain, prior or run configuration is malformed."""


class OutOfDomainError(FunmixError, ValueError):
    """An evaluation point or curve value lies outside its declared domain."""


class InsufficientDataError(FunmixError, ValueError):
    """Not enough observations to carry out the requested computation."""


class NumericalError(FunmixError, ArithmeticError):
    """A linear system could not be factorized or produced non-finite output."""


class DatasetError(FunmixError, ValueError):
    """A dataset file violates the long-format CSV schema."""


class ConfigError(FunmixError, ValueError):
    """A run configuration file contains unknown or invalid keys."""
