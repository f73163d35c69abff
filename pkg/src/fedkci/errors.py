"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FedKCIError(Exception):
    exit_code = 3


class ConfigError(FedKCIError, ValueError):
    """Invalid configuration, model spec or hyperparameters."""

    exit_code = 1


class DataError(FedKCIError):
    """Missing, truncated or malformed data/results files."""

    exit_code = 2


class InputError(FedKCIError, ValueError):
    """Bad call-time input: shape mismatch, label out of range, empty set."""

    exit_code = 2


class InternalError(FedKCIError, RuntimeError):
    """A structural invariant was violated."""

    exit_code = 3
