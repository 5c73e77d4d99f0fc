"""Shared exception types."""


class DimensionError(ValueError):
    """An input vector or matrix has the wrong dimension."""


class ConfigError(ValueError):
    """An algorithm or experiment configuration is invalid."""


class DegenerateGradientError(ValueError):
    """A direction-dependent operation received a zero gradient."""


class TraceError(ValueError):
    """A trace lacks the granularity or fields a consumer requires."""
