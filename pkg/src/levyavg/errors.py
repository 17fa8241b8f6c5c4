"""Exception types shared across the package."""


class LevyAvgError(Exception):
    """Base class for all package errors."""


class InvalidGrid(LevyAvgError):
    pass


class InvalidHorizon(LevyAvgError):
    pass


class InvalidTime(LevyAvgError):
    pass


class InvalidExponent(LevyAvgError):
    pass


class InvalidBlock(LevyAvgError):
    pass


class InvalidPairing(LevyAvgError):
    pass


class UnsupportedMeasure(LevyAvgError):
    pass


class UnsupportedModel(LevyAvgError):
    pass


class NumericError(LevyAvgError):
    pass


class CoefficientError(LevyAvgError):
    """A coefficient map returned a non-finite value; message says where."""


class DomainExceeded(LevyAvgError):
    """A query left the tabulated domain.  Carries the offending state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NoSignal(LevyAvgError):
    """A mixing curve sits at the Monte Carlo noise floor for all lags."""


class StaleCache(LevyAvgError):
    """A cached table is unreadable or from another version; refit it."""


class BlowUp(LevyAvgError):
    """State became non-finite at time ``t``; carries the last finite path."""

    def __init__(self, t, partial=None):
        super().__init__(f"state became non-finite at t={t:.6g}")
        self.t = t
        self.partial = partial
