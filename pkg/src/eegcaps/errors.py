"""Exception hierarchy.

``ValidationError`` subclasses mean a caller violated a precondition or an
input failed its invariants (CLI exit code 2).  ``DataIOError`` subclasses
mean a file is missing or malformed (CLI exit code 3).
"""


class EegcapsError(Exception):
    pass


class ValidationError(EegcapsError):
    pass


class DataIOError(EegcapsError):
    pass


# signal
class InvalidBandEdges(ValidationError):
    pass


class EvenTaps(ValidationError):
    pass


class RecordingTooShort(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class SegmentTooShort(ValidationError):
    pass


class BandOutsidePSD(ValidationError):
    pass


# topomap
class SouthPoleSingularity(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


# capsnet
class ShapeMismatch(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


# experiment
class EmptyBandSet(ValidationError):
    pass


class EmptyTestSet(ValidationError):
    pass


class FoldImbalance(ValidationError):
    pass


class DuplicateSubject(ValidationError):
    pass


# synthgen
class DurationTooShort(ValidationError):
    pass


# file inputs
class ParseError(DataIOError):
    pass


class MissingRecording(DataIOError):
    pass
