"""Exception types shared across the package."""


class MotionError(Exception):
    """Base class for all actionsynth errors."""


class ShapeError(MotionError):
    """An array or sequence has the wrong shape or length."""


class DegenerateInput(MotionError):
    """A geometric input collapsed below the numeric tolerance."""


class NotARotation(MotionError):
    """A matrix failed the orthonormality check."""


class FormatError(MotionError):
    """A file does not conform to the container format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(MotionError):
    """A loaded value violates a dataset invariant."""


class RateError(MotionError):
    """Requested frame rate is not reachable from the source rate."""


class DurationError(MotionError):
    """Requested duration is outside the supported range."""


class DeadEnd(MotionError):
    """A tag has no usable outgoing transition."""


class DeadRequest(MotionError):
    """An action request cannot produce any frames."""


class DivergenceError(MotionError):
    """Training loss became non-finite."""

    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class EmptyBank(MotionError):
    """The start-pose bank has no entries for the requested tag."""


class TooFew(MotionError):
    """Not enough samples to compute the statistic."""


class TooShort(MotionError):
    """A clip is too short for a velocity-based quantity."""


class DimensionMismatch(MotionError):
    """Two statistics have incompatible dimensions."""


class BoundaryMismatch(MotionError):
    """Recorded action boundaries do not match the expectation."""


class EmptyInput(MotionError):
    """An aggregate was requested over an empty collection."""


class UndefinedDirection(MotionError):
    """A trajectory head is too short to define a direction."""
