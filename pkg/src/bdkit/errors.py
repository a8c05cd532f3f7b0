"""Exception hierarchy shared by all bdkit modules."""


class BDError(Exception):
    """Base class for every error raised by bdkit."""


class IndexRangeError(BDError, ValueError):
    """A cluster index lies outside the admissible range."""


class RuleError(BDError, ValueError):
    """A rate rule was declared with invalid parameters."""


class DegenerateFragmentationError(BDError):
    """A zero fragmentation rate makes the detailed-balance product undefined."""


class IndeterminateLimitError(BDError):
    """A numerical limit (ratio test, root test, series) did not stabilize.

    Attributes
    ----------
    estimate : object
        The diagnostic record produced by the failed probe, if any.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SupercriticalError(BDError):
    """The injection rate exceeds the critical threshold; no steady state exists."""


class RegimeViolationError(BDError):
    """The model does not satisfy the regime required by the requested operation."""


class StepSizeError(BDError):
    """A time step produced negative concentrations beyond tolerance."""


class DegenerateStateError(BDError):
    """The scheme state cannot be transformed (for example C_1 <= 0)."""


class SingularSystemError(BDError, ArithmeticError):
    """A pivot of the tridiagonal elimination fell below the safety threshold."""


class DivergentSeriesError(BDError):
    """A series required to converge diverged (typically z >= z_s)."""


class BoundUndefinedError(BDError):
    """A closed-form bound is undefined for the supplied model."""


class ResampleRequiredError(BDError):
    """Two trajectories do not share a common sample grid."""


class ConfigError(BDError):
    """One or more configuration errors.

    Attributes
    ----------
    errors : list of (int or None, str)
        Line number (``None`` when not tied to a line) and message for each
        problem found.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = []
        for lineno, msg in self.errors:
            lines.append(f"line {lineno}: {msg}" if lineno is not None else msg)
        super().__init__("; ".join(lines))
