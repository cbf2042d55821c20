"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration, model file or input shape is invalid."""
