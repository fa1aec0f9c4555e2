"""Exception types shared across the package."""


class IocError(Exception):
    """Base class for all package errors."""


class ParseError(IocError):
    """Input file is malformed or missing required fields."""


class InvalidSystem(IocError):
    """System matrices violate an invariant.

    flag is one of 'not_invertible', 'rank_deficient_B', 'uncontrollable'.
    """

    def __init__(self, flag, msg=None):
        self.flag = flag
        super().__init__(msg or flag)


class InvalidCost(IocError):
    """Cost matrix violates a shape or ball invariant."""


class AsymmetricInput(IocError):
    pass


class PsdViolation(IocError):
    pass


class DimensionMismatch(IocError):
    pass


class NumericalFailure(IocError):
    pass


class SizeGuardExceeded(IocError):
    pass


class SingularSystem(IocError):
    pass


class HypothesisUnmet(IocError):
    """A theorem's hypotheses do not hold for the given data."""


class NotIdentifiable(IocError):
    pass


class ResidualTooLarge(IocError):
    pass


class SolverNotConverged(IocError):
    pass


class AmbiguousSolution(IocError):
    pass


class RejectionBudgetExceeded(IocError):
    pass
