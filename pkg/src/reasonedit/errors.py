"""Exception hierarchy shared across the engine.

The CLI maps these onto process exit codes, so new error types should
subclass whichever branch carries the intended code.
"""


class ReasonEditError(Exception):
    """Base class for all engine errors."""


class ArgumentError(ReasonEditError):
    """A caller violated an operation precondition."""


class InputFormatError(ReasonEditError):
    """A malformed input file or record (carries line context where known)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ReasonEditError):
    """A record parsed but violates a domain invariant."""


class DegenerateNetworkError(ReasonEditError):
    """Similarity network has no edge weight to normalize against."""


class NoFeasibleWeightError(ReasonEditError):
    """Every candidate text weight scored -inf during fitting."""


class CompatibilityError(ReasonEditError):
    """Artifacts built under one dual-embedding config used with another."""


class SnapshotFormatError(ReasonEditError):
    """Corrupt or truncated binary snapshot / embedding dump."""


class ProviderError(ReasonEditError):
    """Base class for provider-side failures."""


class ProviderTransportError(ProviderError):
    """Provider unreachable or request failed in transit (retryable)."""


class ProviderNotFoundError(ProviderError):
    """Provider does not know the referenced image or record."""


class ProviderUnsupportedError(ProviderError):
    """The active provider mode cannot serve this operation."""
