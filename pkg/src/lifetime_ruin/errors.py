"""Exception hierarchy shared by all modules."""


class RuinError(Exception):
    """Base class for every error raised by this package."""

    code = "RuinError"


class ModelError(RuinError, ValueError):
    """Invalid or unsupported model/configuration input."""

    code = "ModelError"


class DimensionMismatch(ModelError):
    code = "DimensionMismatch"


class NotPositiveDefinite(ModelError):
    code = "NotPositiveDefinite"

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class CorrelationOutOfRange(ModelError):
    code = "CorrelationOutOfRange"


class InvalidParameter(ModelError):
    """Negative rate/hazard/volatility or malformed curve."""

    code = "InvalidParameter"


class UnsupportedModel(ModelError):
    code = "UnsupportedModel"


class NonpositiveRate(UnsupportedModel):
    code = "NonpositiveRate"


class NegativeWealth(ModelError):
    code = "NegativeWealth"


class OutOfDomain(ModelError):
    code = "OutOfDomain"


class InvalidStrategy(ModelError):
    code = "InvalidStrategy"


class NumericalError(RuinError, ArithmeticError):
    """Failure inside a numerical routine."""

    code = "NumericalError"


class DegenerateNormalizer(NumericalError):
    code = "DegenerateNormalizer"


class DegenerateSecondDerivative(NumericalError):
    code = "DegenerateSecondDerivative"


class NonConvergence(NumericalError):
    code = "NonConvergence"


class InstabilityDetected(NumericalError):
    code = "InstabilityDetected"
