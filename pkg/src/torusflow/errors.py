"""Exception hierarchy shared by all modules."""


class TorusFlowError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(TorusFlowError, ValueError):
    """Invalid field, integrator, quadrature or scenario parameters."""


class StepSizeUnderflow(TorusFlowError):
    """The adaptive controller asked for a step below ``min_step``.

    ``time`` and ``state`` hold the last accepted point of the offending row.
    """

    def __init__(self, message, time=None, state=None, row=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.row = row


class NumericalBlowup(TorusFlowError):
    """A non-finite value appeared in the integrated state."""


class QuadratureDivergence(TorusFlowError):
    """Refinement around a singular point does not converge (integrand not in L1)."""


class HorizonCapExceeded(TorusFlowError):
    """``t / eps`` exceeds the configured fast-time horizon."""


class NodeBudgetExceeded(TorusFlowError):
    """A space-time quadrature would need more nodes than allowed."""

    def __init__(self, required, allowed):
        super().__init__(
            f"quadrature needs {required} nodes but the budget allows {allowed}"
        )
        self.required = required
        self.allowed = allowed


class NonDiffeomorphism(TorusFlowError):
    """A sampled Jacobian determinant of a candidate rectification is ~0."""
