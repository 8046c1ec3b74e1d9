"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value or incompatible shapes."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""
