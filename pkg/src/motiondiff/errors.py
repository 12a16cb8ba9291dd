"""Exception hierarchy.

Validation errors cover bad inputs, malformed files, and configuration
problems (CLI exit code 1).  Numerics errors cover runtime numerical
failures such as divergent training (CLI exit code 2).
"""


class MotionDiffError(Exception):
    """Base class for all library errors."""


class ValidationError(MotionDiffError):
    """Invalid argument, configuration, or file content."""


class MalformedFileError(ValidationError):
    """File could not be parsed into the expected structure."""


class NonFiniteValueError(ValidationError):
    """Data contains NaN or infinite entries."""


class ShapeMismatchError(ValidationError):
    """Array dimensions are inconsistent with each other or the config."""


class NumericsError(MotionDiffError):
    """Numerical failure at runtime (divergence, non-finite results)."""
