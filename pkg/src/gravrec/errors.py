"""Exception taxonomy shared by the whole package.

The CLI maps these onto exit codes: configuration and contract problems are
usage errors (1), dataset and checkpoint problems are data errors (2), and
non-finite numerics are numeric failures (3).
"""


class GravrecError(Exception):
    """Base class for all package-specific errors."""


class ContractViolation(GravrecError):
    """An argument broke a documented precondition (shape, range, ...)."""


class IntegrationError(GravrecError):
    """A non-finite state appeared while integrating the drift dynamics."""


class DataError(GravrecError):
    """Dataset ingestion, splitting, or lookup failed."""


class CheckpointError(GravrecError):
    """A checkpoint file is malformed, truncated, or of the wrong version."""


class NumericError(GravrecError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(GravrecError):
    """A configuration file or override contains unknown or invalid keys."""
