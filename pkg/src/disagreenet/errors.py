"""Exception types shared across the package."""


class DisagreeNetError(Exception):
    """Base class for all package errors."""


class ParseError(DisagreeNetError):
    """Malformed input file (CSV / JSONL)."""


class TraceFormatError(DisagreeNetError):
    """Corrupt, truncated or incompatible trace file."""


class IngestionError(DisagreeNetError):
    """External trace records are incomplete or inconsistent."""


class FidelityError(DisagreeNetError):
    """A score was requested that the trace does not carry enough data for."""


class TrainingDivergenceError(DisagreeNetError):
    """Training produced a non-finite loss or unbounded weights."""

    def __init__(self, message, model=None, epoch=None):
        super().__init__(message)
        self.model = model
        self.epoch = epoch


class DegenerateFitError(DisagreeNetError):
    """The score distribution has a single mode; no mixture fit possible."""
