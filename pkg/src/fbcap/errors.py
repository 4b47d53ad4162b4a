"""Exception hierarchy.

Errors fall in two families so the CLI can map them to exit codes:
``UserInputError`` (bad model, bad flag, out-of-range parameter) and
``NumericalError`` (a computation that should have worked did not).
"""


class FbcapError(Exception):
    pass


class UserInputError(FbcapError, ValueError):
    pass


class NumericalError(FbcapError, ArithmeticError):
    pass


# model
class DimensionMismatch(UserInputError):
    pass


class JointNoiseNotPSD(UserInputError):
    pass


class Sigma1NotPSD(UserInputError):
    pass


class InvalidDelay(UserInputError):
    pass


# matops
class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# kalman / detect
class NotDetectable(UserInputError):
    pass


class SingularInnovation(NumericalError):
    pass


class RiccatiDivergence(NumericalError):
    pass


class OrthogonalityViolated(NumericalError):
    pass


class SingularOutputCovariance(NumericalError):
    pass


# sdp
class SolverFailure(NumericalError):
    pass


class Infeasible(SolverFailure):
    pass


class MaxIterations(SolverFailure):
    pass


class NumericalFailure(SolverFailure):
    pass


# capacity
class UnitCircleNoise(UserInputError):
    pass


class OutOfRange(UserInputError):
    pass


class ConsistencyError(NumericalError):
    """Post-solve recovery produced a matrix that violates a structural invariant."""
