"""Exception hierarchy shared across the package."""


class TrfdError(Exception):
    """Base class for all package errors."""


class ShapeError(TrfdError):
    """Dimension or shape mismatch."""


class RangeError(TrfdError):
    """Index or parameter outside its valid range."""


class ConfigError(TrfdError):
    """Invalid configuration; message lists all violations."""


class NumericError(TrfdError):
    """Numerical failure (non-convergence, NaN, degenerate input)."""


class FormatError(TrfdError):
    """Corrupt, truncated, or unsupported file content."""
