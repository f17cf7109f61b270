"""Exception hierarchy shared across the package."""


class HiercastError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(HiercastError):
    """Raised when input data or configuration violates a documented contract."""


class DegenerateSeriesError(HiercastError):
    """Raised when a series history cannot support a scaled-error denominator
    (constant after leading-zero trimming, or too short)."""


class SchemaMismatchError(HiercastError):
    """Raised when a fitted model is applied to a feature matrix built under a
    different feature schema."""
