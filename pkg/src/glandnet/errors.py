"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GlandError(Exception):
    exit_code = 3


class DataError(GlandError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 1


class DomainError(DataError):
    """Operation undefined for the given input (e.g. Hausdorff of an empty set)."""


class ConfigError(GlandError, ValueError):
    """Invalid configuration, network schedule or shape contract."""

    exit_code = 2


class InternalError(GlandError, RuntimeError):
    exit_code = 3
