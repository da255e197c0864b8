"""Exception hierarchy shared by all solver stages."""


class PistonShockError(Exception):
    """Base class for every error raised by this package."""


class VacuumStateError(PistonShockError):
    """Riemann-invariant conversion requested for a vacuum or inverted state."""


class NoAdmissibleShock(PistonShockError):
    """No entropy-satisfying shock exists for the given (speed, ambient density)."""

    def __init__(self, s_prime, rho_inf, gamma, target):
        self.s_prime = s_prime
        self.rho_inf = rho_inf
        self.gamma = gamma
        self.target = target
        super().__init__(
            f"no admissible shock: s'^2 rho_inf^(1-gamma) = {target:.6g} "
            f"must exceed gamma = {gamma:.6g} (s' = {s_prime:.6g}, rho_inf = {rho_inf:.6g})"
        )


class InvariantBreach(PistonShockError):
    """A structural invariant of a computed solution failed; indicates a solver bug."""


class SonicDegeneracy(PistonShockError):
    """Relative-flow denominator approached zero during profile integration."""

    def __init__(self, sigma_star, message=""):
        self.sigma_star = sigma_star
        super().__init__(
            message or f"sonic degeneracy at sigma = {sigma_star:.8g}; "
            "ambient density is outside the small-density validity regime"
        )


class StiffnessError(PistonShockError):
    """Profile integration step underflowed; rho_inf too large or tolerance too tight."""


class MarchingBreakdown(PistonShockError):
    """Backward eigenvalue lost positivity, inward sideways marching is invalid."""


class VacuumFormation(PistonShockError):
    """Riemann-invariant ordering w+ > w- failed at a marched node."""


class CoverageFailure(PistonShockError):
    """The piston path left the covered strip before the layer budget was exhausted."""


class GradientBlowup(PistonShockError):
    """Gradient transport integration diverged; imminent loss of smoothness."""

    def __init__(self, r, t, value):
        self.r = r
        self.t = t
        self.value = value
        super().__init__(f"gradient transport blew up at (r, t) = ({r:.6g}, {t:.6g}), value {value:.3g}")


class SolverFailure(PistonShockError):
    """Finite-volume step failed after retries; carries the offending state."""

    def __init__(self, message, state=None):
        self.state = state
        super().__init__(message)


class ConfigError(PistonShockError):
    """Run configuration rejected before any solver ran."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))
