"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems -> 1, data problems -> 2,
numeric / verification failures -> 3.
"""


class CfbtError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CfbtError):
    """Invalid or inconsistent configuration (bad key, bad value, bad shape wiring)."""


class ShapeError(CfbtError):
    """Tensor shape mismatch between cooperating components."""


class ContractViolation(CfbtError):
    """An operation was called outside its documented contract."""


class DataError(CfbtError):
    """Malformed dataset, annotation file, or sequence directory."""


class NumericError(CfbtError):
    """Non-finite values where finite ones are required."""
