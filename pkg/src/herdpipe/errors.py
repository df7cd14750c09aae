"""Exception taxonomy shared across the toolkit.

Transient vs. permanent backend errors matter for retry logic: only
transient failures (timeouts, connection resets, 5xx) are retried.
"""


class HerdpipeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HerdpipeError):
    """Invalid configuration: thresholds, fractions, unknown criteria."""


class GeometryError(HerdpipeError):
    """Invalid box geometry."""


class EmptyClipError(GeometryError):
    """Box lies entirely outside the image it was clipped against."""


class ParseError(HerdpipeError):
    """Malformed annotation input. Carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class DatasetError(HerdpipeError):
    """Dataset-consistency fault: dangling image ids, duplicate records."""


class OracleMissError(DatasetError):
    """Mock oracle was asked about an image it has no fixture for."""


class ProtocolError(HerdpipeError):
    """Backend response does not conform to the wire schema."""


class BackendError(HerdpipeError):
    """Failure while talking to an external backend."""


class TransientBackendError(BackendError):
    """Retryable backend failure (timeout, connection error, 5xx)."""


class PermanentBackendError(BackendError):
    """Non-retryable backend failure (4xx, schema mismatch)."""
