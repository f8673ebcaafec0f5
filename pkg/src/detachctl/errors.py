"""Exception hierarchy.

Everything derives from ``DetachError`` so the CLI can map it to exit codes.
``ValidationError`` subclasses mean bad input (exit 2); the rest are runtime
failures (exit 3).
"""


class DetachError(Exception):
    pass


class ValidationError(DetachError, ValueError):
    pass


class FormatError(ValidationError):
    """Malformed frame/model/trace/config file."""


class DimensionMismatch(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class DegenerateFrame(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class DegenerateGeometry(ValidationError):
    pass


class XPointOffFrame(ValidationError):
    pass


class GeometryOffFrame(ValidationError):
    pass


class NonPositiveDt(ValidationError):
    pass


class NonUniformSampling(ValidationError):
    pass


class EmptyWindow(ValidationError):
    pass


class AllZeroOutboard(DetachError):
    pass


class NoStepFound(DetachError):
    pass


class UnstableResult(DetachError):
    pass


class InsufficientSamples(DetachError):
    pass


class NoSweepDetected(DetachError):
    pass


class LabelingError(DetachError):
    """A per-frame labeling failure inside a batch; carries the frame index."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"frame {index}: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


class TickError(DetachError):
    """A module error raised inside the control loop at a given tick."""

    def __init__(self, tick: int, cause: Exception):
        super().__init__(f"tick {tick}: {type(cause).__name__}: {cause}")
        self.tick = tick
        self.cause = cause
