"""Exception hierarchy shared by the numerics and the CLI."""


class PNPError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(PNPError, ValueError):
    pass


class MeshError(PNPError, ValueError):
    pass


class QuadratureError(PNPError, ValueError):
    pass


class BasisError(PNPError, ValueError):
    pass


class ExpressionError(PNPError, ValueError):
    pass


class ProblemError(PNPError, ValueError):
    pass


class FormError(PNPError, ValueError):
    pass


class NonPositiveMobilityError(FormError):
    pass


class IncompatibleChargeError(FormError):
    pass


class SingularSystemError(FormError):
    pass


class LimiterError(PNPError, ValueError):
    pass


class DiagnosticsError(PNPError, ValueError):
    pass


class SolverError(PNPError, RuntimeError):
    """A time step could not be completed.

    ``report`` is the partially filled step report (if any) and
    ``recommended_dt`` a smaller step the caller may retry with.
    """

    def __init__(
        self, message: str, *, report=None, recommended_dt: float | None = None
    ) -> None:
        super().__init__(message)
        self.report = report
        self.recommended_dt = recommended_dt


class NewtonDivergenceError(SolverError):
    pass


class PositivityError(SolverError):
    pass
