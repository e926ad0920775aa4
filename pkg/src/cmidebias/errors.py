"""Exception and warning types raised across the package."""


class DebiasError(Exception):
    """Base class for all package errors."""


class EmptyDataset(DebiasError):
    pass


class KMismatch(DebiasError):
    pass


class InvalidWeights(DebiasError):
    pass


class AllZeroWeightCoverage(InvalidWeights):
    pass


class TooFewRows(DebiasError):
    pass


class NonBinaryVariables(DebiasError):
    pass


class DivergedTraining(DebiasError):
    pass


class EmptyCounts(DebiasError):
    pass


class SchemaMismatch(DebiasError):
    pass


class ObjectiveAlwaysNonFinite(DebiasError):
    pass


class SingularKernel(DebiasError):
    pass


class ZeroMarMass(DebiasError):
    pass


class AllStrataEmpty(DebiasError):
    pass


class LengthMismatch(DebiasError):
    pass


class DegenerateLabels(DebiasError):
    pass


class EmptySample(DebiasError):
    pass


class CalibrationFailed(DebiasError):
    pass


class ShapeMismatch(DebiasError):
    pass


class RatingOutOfRange(DebiasError):
    pass


class MissingColumn(DebiasError):
    pass


class NonNumericFeature(DebiasError):
    pass


class DegenerateAttributeWarning(UserWarning):
    """Fewer distinct bias-attribute values than requested strata."""


class SingleClassTargetWarning(UserWarning):
    """Click model trained on a target with a single class."""


class DataWarning(UserWarning):
    """Input data was accepted with a defaulted or suspicious field."""
