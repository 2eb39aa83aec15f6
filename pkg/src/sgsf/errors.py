class SGSFError(Exception):
    """Base class for package errors."""


class ValidationError(SGSFError, ValueError):
    """Invalid configuration or parameter value."""


class LayoutError(SGSFError):
    """Dataset folder does not follow the expected layout."""


class MetricUndefinedError(SGSFError, ValueError):
    """A metric cannot be computed for the given labels."""


class ShapeError(SGSFError, ValueError):
    """Tensor or image shapes are incompatible."""
