"""Exception hierarchy.

Every error carries the process exit code the CLI uses for it:
2 for input validation, 3 for numerical non-convergence, 4 for I/O.
"""


class LesionKitError(Exception):
    exit_code = 1


class ValidationError(LesionKitError, ValueError):
    exit_code = 2


class NumericalError(LesionKitError, ArithmeticError):
    exit_code = 3


class InputOutputError(LesionKitError, OSError):
    exit_code = 4


# ingest
class MissingColumn(ValidationError):
    pass


class DuplicateSampleId(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class EmptySelection(ValidationError):
    pass


class RowNotStochastic(ValidationError):
    pass


class UnknownSampleId(ValidationError):
    pass


class RaggedCrops(ValidationError):
    pass


class IncompleteTensor(ValidationError):
    """A (model, sample, crop) cell is missing or duplicated."""


class ClassCountMismatch(ValidationError):
    pass


# splits
class TooFewGroups(ValidationError):
    pass


class FoldOutOfRange(ValidationError):
    pass


# balance
class ZeroClassCount(ValidationError):
    pass


class BatchTooSmall(ValidationError):
    pass


# metrics
class LengthMismatch(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class EmptyMatrix(ValidationError):
    pass


class DegenerateClass(ValidationError):
    pass


# cropper
class CropTooLarge(ValidationError):
    pass


class NonSquareR(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


# trainer
class EpochOutOfRange(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# meta
class SingleClass(ValidationError):
    pass


class MissingClass(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class NoConvergence(NumericalError):
    pass


# ensemble
class EmptyEnsemble(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass
