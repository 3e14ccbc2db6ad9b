"""Exception and warning types shared across the package."""


class RicciTransportError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RicciTransportError, ValueError):
    pass


class SolvabilityError(RicciTransportError):
    """A Poisson source is not centered (Gauss-Bonnet balance broken upstream)."""


class StepRejected(RicciTransportError):
    """A flow step tripped the growth monitor; retry with a smaller step."""

    def __init__(self, message: str, dt: float, growth: float):
        super().__init__(message)
        self.dt = dt
        self.growth = growth


class FlowNotConverged(RicciTransportError):
    def __init__(self, message: str, trajectory=None, diagnostics=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.diagnostics = diagnostics or {}


class CertificationError(RicciTransportError):
    """The curvature floor is not positive, so no certificate can be issued."""


class IntegrationError(RicciTransportError):
    def __init__(self, message: str, worst_error: float):
        super().__init__(message)
        self.worst_error = worst_error


class AccuracyWarning(UserWarning):
    pass
