"""Exception hierarchy shared by all solver stages."""


class ProjIlqrError(Exception):
    """Base class for every error raised by this package."""


class DefinitionError(ProjIlqrError, ValueError):
    """The problem definition or its data is inconsistent."""


class NumericalError(ProjIlqrError, ArithmeticError):
    """A non-finite or otherwise invalid number was produced."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DivergenceError(NumericalError):
    """Forward simulation left the finite range."""


class InfeasibleConstraintError(ProjIlqrError):
    """A degenerate constraint row demands a nonzero right-hand side."""


class RelativeDegreeError(ProjIlqrError):
    """The discretized constraints do not have relative degree one."""

    def __init__(self, violation):
        super().__init__(str(violation))
        self.violation = violation


class AdmissibilityError(ProjIlqrError):
    """The singular Riccati step is not well defined at some stage."""

    def __init__(self, violation):
        super().__init__(str(violation))
        self.violation = violation
