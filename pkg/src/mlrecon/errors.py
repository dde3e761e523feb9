"""Exception hierarchy shared by all pipeline stages."""


class MlreconError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MlreconError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(InvalidInputError):
    """Numerically degenerate input (near-zero or parallel columns, etc.)."""


class NoObservationError(MlreconError):
    """The simulated camera produced no usable observation for this check."""


class TrackingLostError(MlreconError):
    """Too many consecutive checks without an observation; cannot recover."""


class InsufficientDataError(MlreconError):
    """Not enough mutually valid samples to compute a result."""


class UndefinedLagError(MlreconError):
    """Temporal lag is undefined (flat signal, empty overlap)."""


class DegenerateObservationError(MlreconError):
    """A single calibration observation is unusable (coincident points)."""


class DegenerateConfigurationError(MlreconError):
    """The observation set cannot constrain the solve (collinear targets)."""


class UndefinedMetricError(MlreconError):
    """Metric undefined for this input (e.g. empty mask)."""


class DataError(MlreconError):
    """Schema or parse failure in an on-disk artifact (CLI exit code 3)."""


class NumericError(MlreconError):
    """Numeric failure such as NaN or divergence (CLI exit code 4)."""
