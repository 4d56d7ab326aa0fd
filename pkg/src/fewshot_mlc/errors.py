"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class FewshotError(Exception):
    """Base class for all package errors."""


class ConfigError(FewshotError):
    """Invalid configuration (bad key, out-of-range value, missing path)."""


class DataError(FewshotError):
    """Malformed or inconsistent corpus, embedding, or episode data."""


class NumericError(FewshotError):
    """Non-finite value encountered where a finite one is required."""
