"""Exception types raised across the package."""


class CffdError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(CffdError, ValueError):
    """A configuration value violates its documented range."""


class InvalidGeometryError(CffdError, ValueError):
    """A geometric quantity (distance, area) is non-physical."""


class InsufficientPilotsError(CffdError, ValueError):
    """Fewer pilot symbols than users that need orthogonal pilots."""


class ConstraintViolationError(CffdError, ValueError):
    """A power allocation or mode assignment breaks a hard constraint."""


class InfeasibleProblemError(CffdError):
    """An optimization problem has no feasible point."""


class ConfigParseError(CffdError, ValueError):
    """A config file could not be parsed.

    ``line`` is the 1-based line number of the offending entry when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
