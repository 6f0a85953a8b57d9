"""Exception hierarchy shared by the simulator modules."""


class XbarError(Exception):
    """Base class for every error raised by xbarsim."""


class InputError(XbarError, ValueError):
    """Rejected input: wrong shape, out-of-range value, malformed file."""


class SolverDegenerateError(XbarError):
    """The nodal system is singular or produced a non-finite solution."""


class ConvergenceError(XbarError):
    """Newton iteration did not reach the residual target."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConversionInfeasibleError(XbarError):
    """Compensated conductances fall outside the programmable range."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        # list of (row, col, required conductance)
        self.offending = offending or []


class DegenerateMatrixError(XbarError, ValueError):
    """A weight matrix cannot be mapped (e.g. every entry equal)."""


class PlanError(XbarError):
    """Network description is inconsistent."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer
