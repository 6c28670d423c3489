"""Exception hierarchy.

Errors fall in two families that the CLI maps to different exit codes:
``ModelError`` for malformed input and ``PreconditionError`` for a valid
model handed to an operation whose hypotheses it does not satisfy.
"""


class NTBIError(Exception):
    """Base class for all package errors."""


class ModelError(NTBIError, ValueError):
    pass


class NegativeRate(ModelError):
    pass


class DiagonalMismatch(ModelError):
    pass


class Singular(ModelError):
    pass


class NotPositivelyRegular(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class PreconditionError(NTBIError):
    pass


class OutOfDomain(PreconditionError, ValueError):
    pass


class NoConvergence(NTBIError, RuntimeError):
    def __init__(self, message, last_iterate=None, bound=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.bound = bound


class PivotNotAllowed(PreconditionError):
    pass


class StiffnessFailure(NTBIError, RuntimeError):
    pass


class NotApplicable(PreconditionError):
    pass


class IndeterminateJ(NTBIError):
    pass


class QuadratureFailure(NTBIError, RuntimeError):
    pass


class NotAlmostSurelyExtinct(PreconditionError):
    pass


class NotErgodic(PreconditionError):
    pass


class TruncationResidualTooLarge(NTBIError):
    pass


class NotCommunicating(PreconditionError):
    pass


class WrongEncoding(PreconditionError):
    pass


class NonPositiveCoefficient(NTBIError):
    pass


class NonConservativeModel(PreconditionError):
    pass


class DegenerateEstimate(NTBIError):
    pass


class CapTooSmall(PreconditionError):
    pass


class SingularSystem(NTBIError, RuntimeError):
    pass


class Underflow(NTBIError):
    pass
