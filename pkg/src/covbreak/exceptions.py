"""Exception hierarchy.

All errors derive from :class:`CovBreakError`; most also derive from
``ValueError`` so that callers treating bad arguments generically keep working.
"""


class CovBreakError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(CovBreakError, ValueError):
    """Non-finite, mis-shaped or otherwise malformed input data."""


class InsufficientDataError(CovBreakError, ValueError):
    """Too few observations for the requested estimate."""


class SampleTooShortError(InsufficientDataError):
    """Sample shorter than ``2 * n + 1`` for a window size ``n``."""


class OutOfRangeError(CovBreakError, IndexError):
    """Central point or index outside its admissible range."""


class ConfigurationError(CovBreakError, ValueError):
    """Inconsistent settings (window sets, replicate counts, horizons, ...)."""


class NoDetectionError(CovBreakError):
    """Localization requested from a report that did not reject."""


class DataFormatError(InvalidInputError):
    """Delimited-text input that cannot be parsed.

    ``row`` and ``column`` are 1-based positions in the source (``None`` when
    the error is not tied to a single cell).
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column
