"""Exception hierarchy shared by all mchmm modules."""


class MchmmError(Exception):
    """Base exception for mchmm errors."""
    pass


class ConfigError(MchmmError):
    """Invalid parameters, states or run configuration."""
    pass


class NumericError(MchmmError):
    """A numerical stage could not produce a usable result."""
    pass


class TruncationError(NumericError):
    """Probability mass lost past the truncation box exceeds the allowed limit."""
    pass


class ObservationRangeError(NumericError):
    """An observed count exceeds the emission truncation bound M."""
    pass


class ZeroLikelihoodError(NumericError):
    """The observation sequence has probability zero under the model."""
    pass


class ConvergenceError(NumericError):
    """No start of a multi-start fit produced a model."""
    pass


class MomentInversionError(NumericError):
    """Moments cannot be mapped back to rates (inconsistent or noisy inputs)."""

    def __init__(self, message: str, moments: dict[str, float] | None = None):
        super().__init__(message)
        self.moments = moments or {}

    def __str__(self):
        base = super().__str__()
        if not self.moments:
            return base
        shown = ", ".join(f"{k}={v:.6g}" for k, v in self.moments.items())
        return f"{base} (moments: {shown})"
