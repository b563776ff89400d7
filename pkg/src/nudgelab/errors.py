"""Exception types raised by the nudgelab library.

Every error derives from :class:`NudgelabError` and from the closest
builtin exception, so callers that only know about :class:`ValueError`
or :class:`RuntimeError` still catch them.
"""


class NudgelabError(Exception):
    """Base class for all library errors."""


class ResolutionError(NudgelabError, ValueError):
    """The grid cannot resolve the requested quantity."""


class ShapeError(NudgelabError, ValueError):
    """Array shape does not match the grid."""


class RegionError(NudgelabError, ValueError):
    """A quadrature region holds no grid points."""


class CoverError(NudgelabError, ValueError):
    """A cover is malformed or violates the overlap bound."""


class PartitionError(NudgelabError, ValueError):
    """A partition of unity fails to sum to one."""


class SampleError(NudgelabError, ValueError):
    """Too few grid samples for a local operator."""


class ConditioningError(NudgelabError, ValueError):
    """A dual basis is too ill-conditioned to build."""


class OrderError(NudgelabError, ValueError):
    """A Sobolev index exceeds an operator's order or level."""


class ConditionError(NudgelabError, ValueError):
    """A sufficient condition cannot be evaluated."""


class NumericalInstability(NudgelabError, RuntimeError):
    """A time integration blew up."""


class ConfigError(NudgelabError, ValueError):
    """A configuration file or override is invalid.

    :param message: Human readable description.
    :param key: Dotted config key the error concerns, if known.
    :param line: 1-based line number in the config file, if known.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
