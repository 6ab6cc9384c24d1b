"""Exception taxonomy shared across the package.

CLI exit codes: 2 = usage/config, 3 = data error, 4 = invariant violation.
"""


class TerrapilotError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(TerrapilotError):
    """Bad configuration: unknown key, missing file, invalid value."""

    exit_code = 2


class UsageError(TerrapilotError):
    """Bad command-line usage (missing inputs, wrong flag combination)."""

    exit_code = 2


class DataError(TerrapilotError):
    """Corrupt or incompatible data: checksum, version, or hash mismatch."""

    exit_code = 3


class InvariantViolation(TerrapilotError):
    """A runtime invariant the code promises to uphold was broken."""

    exit_code = 4


class DimensionError(InvariantViolation):
    """Shape mismatch between tensors; message names both shapes."""


class DegenerateMaskError(InvariantViolation):
    """An attention mask selected zero key/value rows."""


class NondeterministicLossError(InvariantViolation):
    """A loss function returned different values on repeated evaluation."""
