"""Shared exception types."""


class FormatError(ValueError):
    """An input file violates its documented format."""


class ConfigError(ValueError):
    """Invalid configuration key, value, or flag combination."""


class TransportError(RuntimeError):
    """A scoring service could not be reached after retries."""


class MalformedResponseError(ValueError):
    """A scoring service reply violates the wire protocol."""


class ScoringError(RuntimeError):
    """Score-matrix assembly failed for a specific node."""
