"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit 1,
data errors exit 2, numeric failures exit 3.
"""


class CrossRecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CrossRecError):
    """Invalid configuration value or unknown configuration key."""


class DataError(CrossRecError):
    """Malformed, empty, or internally inconsistent input data."""


class ParseError(DataError):
    """A text input failed to parse; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class NumericError(CrossRecError):
    """A numeric computation produced non-finite or otherwise invalid values."""


class IntegrityError(DataError):
    """A binary container failed its checksum or was truncated."""


class VersionError(DataError):
    """A serialized artifact has an unsupported format version."""
