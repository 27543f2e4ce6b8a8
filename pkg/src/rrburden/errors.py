"""Exception hierarchy.

``ValidationError`` subclasses signal bad input or configuration (CLI exit
code 2); everything else deriving from ``RRBurdenError`` is a runtime failure
(exit code 3).
"""


class RRBurdenError(Exception):
    """Base class for all package errors."""


class ValidationError(RRBurdenError):
    """Input or configuration rejected before any work was done."""


class InvalidLabel(ValidationError):
    pass


class InvalidRecording(ValidationError):
    pass


class RecordingTooShort(RRBurdenError):
    pass


class EmptyInput(ValidationError):
    pass


class NonPositiveDuration(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ShapeMismatch(RRBurdenError):
    pass


class MissingCache(RRBurdenError):
    pass


class InvalidHyperparam(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SingleClassDataset(RRBurdenError):
    pass


class NoTrainingData(RRBurdenError):
    pass


class EmptySequence(ValidationError):
    pass


class EmptySpace(ValidationError):
    pass


class BurdenUnreachable(RRBurdenError):
    pass


class DegenerateProportions(RRBurdenError):
    pass


class ZeroVariance(RRBurdenError):
    """Raised only by callers that opt out of the infinite-t convention."""


class EmptyCohort(ValidationError):
    pass


class NoAflWindows(RRBurdenError):
    pass


class MissingMetadata(ValidationError):
    pass


class JoinMismatch(ValidationError):
    pass


class WeightsVersionMismatch(ValidationError):
    pass


class IoError(RRBurdenError):
    pass
