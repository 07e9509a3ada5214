"""Exception types shared across the package."""


class FimstatsError(Exception):
    """Base class for all package-specific errors."""


class KernelDomainError(FimstatsError, ValueError):
    """Raised when a Gaussian kernel is requested outside |b| <= a, a >= 0."""


class NumericOverflowError(FimstatsError, FloatingPointError):
    """A recurrence or network pass produced a non-finite value.

    Carries the layer index at which the overflow was detected.
    """

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class CriticalRateUndefinedError(FimstatsError, ZeroDivisionError):
    """lambda_max == 0, so the critical learning rate 2(1+mu)/lambda_max is undefined.

    This happens only in the degenerate zero-signal case (e.g. zero-input,
    zero-bias ReLU chains where every macroscopic variable collapses to 0).
    """


class IdxParseError(FimstatsError, ValueError):
    """Malformed IDX file. Carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(FimstatsError, ValueError):
    """Invalid or unknown configuration key/value."""
