"""Exception hierarchy for gaugekit.

Every error raised on purpose by this package derives from GaugekitError so
callers can catch one type at the CLI boundary and map it to an exit code.
"""


class GaugekitError(Exception):
    """Base class for all gaugekit errors."""


class DimensionError(GaugekitError):
    """Vector/matrix shapes do not line up."""


class ParameterError(GaugekitError):
    """A numeric parameter is outside its allowed range."""


class EncodingError(GaugekitError):
    """A gauge expression has no conic encoding on the requested path.

    The message names the evaluator to use instead whenever one exists.
    """


class BasisError(GaugekitError):
    """A function basis is malformed (overlapping regions, bad evaluator)."""


class InstanceError(GaugekitError):
    """A case-study instance violates its own invariants."""


class ContractError(GaugekitError):
    """An input violates a documented precondition (e.g. infeasible start)."""


class ConfigError(GaugekitError):
    """A CLI configuration document failed to parse or validate."""
