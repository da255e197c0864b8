"""Thermodynamic and characteristic-structure primitives of the isentropic gas.

Pressure law p = rho^gamma with gamma in (1, 3); everything is in dimensionless
program units. All conversions are pure functions of immutable values and are
safe to call concurrently. Scalar entry points validate their inputs; the
``*_arrays`` helpers are the unchecked vectorized forms used in hot paths.
"""

from dataclasses import dataclass

import numpy as np

from .errors import VacuumStateError

# densities below this are treated as vacuum to avoid underflow sign noise
VACUUM_RHO = 1e-300


@dataclass(frozen=True)
class GasModel:
    """gamma-law gas, adiabatic exponent strictly inside (1, 3)."""

    gamma: float

    def __post_init__(self):
        g = self.gamma
        if not (isinstance(g, (int, float)) and np.isfinite(g) and 1.0 < g < 3.0):
            raise ValueError(f"gamma must lie strictly inside (1, 3), got {g!r}")


@dataclass(frozen=True)
class FluidState:
    """Primitive state (density, radial velocity)."""

    rho: float
    v: float


@dataclass(frozen=True)
class RiemannPair:
    """Riemann invariants w+ = v + 2c/(gamma-1), w- = v - 2c/(gamma-1)."""

    w_plus: float
    w_minus: float


def _pow(rho, p):
    """rho**p via exp/log for non-integer p, with a vacuum guard."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    ok = rho > VACUUM_RHO
    if np.any(ok):
        out = np.where(ok, np.exp(p * np.log(np.where(ok, rho, 1.0))), 0.0)
    return out if out.ndim else float(out)


def sound_speed(gas, rho):
    """c = sqrt(gamma rho^(gamma-1)); zero in the vacuum limit."""
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0):
        raise VacuumStateError(f"negative density {rho!r}")
    c = np.sqrt(gas.gamma * _pow(arr, gas.gamma - 1.0))
    return c if np.ndim(rho) else float(c)


def to_riemann(gas, state):
    """Primitive state to Riemann invariants; defined only for rho > 0."""
    if not state.rho > 0:
        raise VacuumStateError(f"Riemann conversion undefined for rho = {state.rho!r}")
    c = sound_speed(gas, state.rho)
    span = 2.0 * c / (gas.gamma - 1.0)
    return RiemannPair(state.v + span, state.v - span)


def from_riemann(gas, pair):
    """Invert to_riemann; requires the ordering w+ > w-."""
    if not pair.w_plus > pair.w_minus:
        raise VacuumStateError(
            f"degenerate invariant pair (w+ = {pair.w_plus!r}, w- = {pair.w_minus!r})"
        )
    g = gas.gamma
    v = 0.5 * (pair.w_plus + pair.w_minus)
    rho = _pow((g - 1.0) ** 2 * (pair.w_plus - pair.w_minus) ** 2 / (16.0 * g), 1.0 / (g - 1.0))
    return FluidState(rho, v)


def eigenvalues(gas, pair):
    """Characteristic speeds (lambda_minus, lambda_plus) of the invariant pair."""
    if not pair.w_plus > pair.w_minus:
        raise VacuumStateError(
            f"degenerate invariant pair (w+ = {pair.w_plus!r}, w- = {pair.w_minus!r})"
        )
    lam_m, lam_p = eigenvalue_arrays(gas, pair.w_plus, pair.w_minus)
    return float(lam_m), float(lam_p)


# ---------------------------------------------------------------------------
# unchecked array forms


def riemann_arrays(gas, rho, v):
    c = np.sqrt(gas.gamma * _pow(rho, gas.gamma - 1.0))
    span = 2.0 * c / (gas.gamma - 1.0)
    return v + span, v - span


def primitive_arrays(gas, w_plus, w_minus):
    g = gas.gamma
    rho = _pow((g - 1.0) ** 2 * (w_plus - w_minus) ** 2 / (16.0 * g), 1.0 / (g - 1.0))
    return rho, 0.5 * (w_plus + w_minus)


def eigenvalue_arrays(gas, w_plus, w_minus):
    g = gas.gamma
    lam_p = 0.25 * (g + 1.0) * w_plus + 0.25 * (3.0 - g) * w_minus
    lam_m = 0.25 * (3.0 - g) * w_plus + 0.25 * (g + 1.0) * w_minus
    return lam_m, lam_p
