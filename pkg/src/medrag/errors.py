"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: configuration problems exit 2, missing
upstream artifacts exit 3, provider/transport failures exit 4.
"""


class MedragError(Exception):
    """Base class for all pipeline errors."""


class DomainError(MedragError, ValueError):
    """An operation was called outside its mathematical domain."""


class ConfigError(MedragError):
    """Invalid or inconsistent configuration."""


class UpstreamMissingError(MedragError):
    """A pipeline stage was requested before its prerequisites exist."""


class TransportError(MedragError):
    """An HTTP provider could not be reached or kept failing after retries."""


class ProviderLookupError(MedragError, KeyError):
    """A file-backed provider has no entry for the requested key."""

    def __str__(self) -> str:  # KeyError quotes its payload; keep the message readable
        return Exception.__str__(self)
