"""
Error hierarchy shared by every module. The CLI prints `category` in its
one-line failure message and exits with status 1.
"""


class BilliardError(Exception):
    category = "error"


class DomainError(BilliardError, ValueError):
    """An input lies outside the domain of an operation (point inside a scatterer, indefinite matrix, ...)."""

    category = "domain error"


class ArgumentError(BilliardError, ValueError):
    category = "argument error"


class ContractViolation(BilliardError, RuntimeError):
    """Internal inconsistency: an event does not match the state it is applied to, a bound was broken."""

    category = "contract violation"


class NumericalDriftError(BilliardError, ArithmeticError):
    category = "numerical drift"


class FiniteHorizonViolation(BilliardError):
    category = "finite-horizon violation"


class GrazingStepError(BilliardError, ArithmeticError):
    category = "grazing step"


class ConfigurationError(BilliardError):
    """The run is well-formed but its parameters cannot produce a valid experiment."""

    category = "configuration error"


class ConfigParseError(BilliardError, ValueError):
    category = "parse error"


class ConfigValidationError(BilliardError, ValueError):
    category = "validation error"
