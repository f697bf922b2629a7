"""Exception hierarchy for hierlm."""


class HierlmError(Exception):
    """Base class for all hierlm errors."""


class ParseError(HierlmError):
    """Malformed input file (carries a row number where possible)."""


class SchemaError(HierlmError):
    """Column declarations do not match the file or dataset."""


class DataError(HierlmError):
    """Data violates a structural requirement (empty, non-finite, duplicates)."""


class DegenerateScaleError(DataError):
    """A column has no variation where variation is required."""


class ConfigError(HierlmError):
    """Invalid user-supplied option or argument."""


class SpecError(HierlmError):
    """Model specification violates a constraint."""


class CollinearityError(HierlmError):
    """Fixed-effects design is rank deficient."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term


class ConditioningError(HierlmError):
    """A covariance matrix could not be factorized."""

    def __init__(self, message: str, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class ConvergenceError(HierlmError):
    """The optimizer failed to reach the gradient tolerance."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class BoundaryError(HierlmError):
    """A parameter sits on the boundary of its domain."""
