"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent shapes, invalid parameter values, or malformed configs."""


class UsageError(ValueError):
    """An operation was called in a way its contract forbids."""
