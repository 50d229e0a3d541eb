"""Exception types shared across the package."""


class ToricFlowError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ToricFlowError):
    """Raised when a scenario file is malformed or inconsistent."""


class MetricRangeError(ToricFlowError):
    """Raised when exp(s*A) would overflow double precision.

    Carries the offending fibre coordinate and the spectral norm of the
    coupling matrix so callers can report how far out of range they are.
    """

    def __init__(self, s: float, spectral_norm: float, limit: float):
        self.s = float(s)
        self.spectral_norm = float(spectral_norm)
        self.limit = float(limit)
        super().__init__(
            f"|s|*norm(A) = {abs(s) * spectral_norm:.3g} exceeds the "
            f"representable range (limit {limit:.3g}); wrap the trajectory "
            f"into the fundamental domain instead of integrating on the cover"
        )


class NotAnAutomorphismError(ToricFlowError):
    """Raised when exp(A) is not an integer unimodular matrix."""


class StepFailure(ToricFlowError):
    """Raised when the implicit midpoint fixed-point iteration diverges."""

    def __init__(self, residual: float, dt: float, iterations: int):
        self.residual = float(residual)
        self.dt = float(dt)
        self.iterations = int(iterations)
        super().__init__(
            f"midpoint fixed point did not converge after {iterations} "
            f"iterations at dt={dt:g} (residual {residual:.3g}); reduce dt"
        )


class DegenerateLeafError(ToricFlowError):
    """Raised when a level set touches a critical point of the effective
    potential, so the banded-period quadrature is ill-posed."""


class NoReturnError(ToricFlowError):
    """Raised when a Poincare return is requested but no same-direction
    crossing occurs within the integration horizon."""

    def __init__(self, horizon: float):
        self.horizon = float(horizon)
        super().__init__(f"no return crossing within horizon T={horizon:g}")
