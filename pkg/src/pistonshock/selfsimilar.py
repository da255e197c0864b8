"""Constant-shock-speed flow: the self-similar profile between piston and shock.

With sigma = r/t, the field (rho, v)(r, t) = (rho, theta)(sigma) satisfies

    sigma ((theta-sigma)^2 - gamma rho^(gamma-1)) rho'   = 2 rho theta (sigma - theta)
    sigma ((theta-sigma)^2 - gamma rho^(gamma-1)) theta' = 2 gamma rho^(gamma-1) theta

integrated from the shock sigma = s0 (jump data) inward until theta(sigma)
meets sigma, which defines the piston speed b0. The relative-flow denominator
stays negative throughout the validity regime; a sign approach is an honest
SonicDegeneracy failure, never silently continued.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import PistonShockError, SonicDegeneracy, StiffnessError
from .gas import FluidState, _pow, riemann_arrays
from .shock import solve_rh

# abort threshold: |denominator| below this fraction of its shock value
DENOMINATOR_GUARD = 1e-3


def _profile_rhs(gas):
    g = gas.gamma

    def rhs(sigma, y):
        rho, theta = y
        c2 = g * _pow(rho, g - 1.0)
        den = sigma * ((theta - sigma) ** 2 - c2)
        return (2.0 * rho * theta * (sigma - theta) / den, 2.0 * c2 * theta / den)

    return rhs


@dataclass
class SelfSimilarProfile:
    """Sampled profile on [b0, s0] plus dense interpolants and the shock trace."""

    s0: float
    b0: float
    grid: np.ndarray            # strictly decreasing sigma samples, s0 .. b0
    rho_of_sigma: np.ndarray
    theta_of_sigma: np.ndarray
    drho_dsigma: np.ndarray
    dtheta_dsigma: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    gas: object
    amb: object
    trace: object
    tol: float
    _dense: object              # solve_ivp dense output on [b0, s0]
    _below: object              # continuation a short margin below b0
    sigma_min: float            # lowest sigma covered by the continuation

    def sample(self, sigma):
        """Dense-output (rho, theta) at sigma; includes the sub-b0 margin."""
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < self.sigma_min - 1e-12 * self.s0) or np.any(
            sigma > self.s0 * (1 + 1e-12)
        ):
            raise PistonShockError(
                f"sigma outside covered range [{self.sigma_min:.8g}, {self.s0:.8g}]"
            )
        sig = np.clip(sigma, self.sigma_min, self.s0)
        out = np.empty((2,) + sig.shape) if sig.ndim else np.empty((2, 1))
        flat = np.atleast_1d(sig)
        res = np.empty((2, flat.size))
        hi = flat >= self.b0
        if hi.any():
            res[:, hi] = self._dense(flat[hi])
        if (~hi).any():
            res[:, ~hi] = self._below(flat[~hi])
        if sig.ndim:
            return res.reshape((2,) + sig.shape)
        return res[:, 0]

    def derivatives(self, sigma):
        """(rho', theta') evaluated from the governing system at sigma."""
        vals = self.sample(sigma)
        rhs = _profile_rhs(self.gas)
        return np.asarray(rhs(np.asarray(sigma, dtype=float), vals))

    @cached_property
    def _pchip(self):
        inc = self.grid[::-1]
        return (
            PchipInterpolator(inc, self.rho_of_sigma[::-1]),
            PchipInterpolator(inc, self.theta_of_sigma[::-1]),
        )

    def strip_width(self):
        return self.s0 - self.b0

    def mass_residual(self):
        """Relative defect of 3 * int rho sigma^2 dsigma = rho_inf s0^3."""
        total, _ = quad(
            lambda s: float(self._dense(s)[0]) * s * s,
            self.b0, self.s0, epsabs=1e-15, epsrel=1e-13, limit=200,
        )
        exact = self.amb.rho_inf * self.s0**3 / 3.0
        return abs(total - exact) / exact

    def export_csv(self, path):
        with open(path, "w") as f:
            f.write("sigma,rho,theta,drho,dtheta,w_plus,w_minus\n")
            for i in range(self.grid.size):
                f.write(
                    f"{self.grid[i]!r},{self.rho_of_sigma[i]!r},{self.theta_of_sigma[i]!r},"
                    f"{self.drho_dsigma[i]!r},{self.dtheta_dsigma[i]!r},"
                    f"{self.omega_plus[i]!r},{self.omega_minus[i]!r}\n"
                )


def integrate_profile(gas, amb, s0, tol=1e-10, n_grid=1024, margin_fraction=0.25):
    """Integrate the profile from the shock inward and locate the piston speed.

    tol is the free-boundary tolerance: |theta(b0) - b0| <= tol * s0. The
    returned profile keeps an analytic-continuation margin below b0 (fraction
    margin_fraction of the strip) for use by the marching closure.
    """
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tol must lie in [1e-12, 1e-4], got {tol!r}")
    trace = solve_rh(gas, amb, s0)
    g = gas.gamma
    den0 = (trace.v_s - s0) ** 2 - trace.c_s**2
    guard = DENOMINATOR_GUARD * g * _pow(trace.rho_s, g - 1.0)
    if abs(den0) < guard:
        raise SonicDegeneracy(s0, "relative flow at the shock is nearly sonic")

    rhs = _profile_rhs(gas)

    def piston_event(sigma, y):
        return y[1] - sigma

    piston_event.terminal = True
    piston_event.direction = 1.0

    def sonic_event(sigma, y):
        return (y[1] - sigma) ** 2 - g * _pow(y[0], g - 1.0) + guard

    sonic_event.terminal = True
    sonic_event.direction = 1.0

    rtol = min(max(0.01 * tol, 1e-13), 1e-8)
    sol = solve_ivp(
        rhs, (s0, 0.9 * trace.v_s), [trace.rho_s, trace.v_s],
        method="RK45", rtol=rtol, atol=rtol * 1e-3 * trace.rho_s,
        events=(piston_event, sonic_event), dense_output=True,
    )
    if sol.status == -1:
        raise StiffnessError(
            f"profile integration failed: {sol.message} "
            "(rho_inf may be outside the validity regime, or tol too tight)"
        )
    if len(sol.t_events[1]):
        raise SonicDegeneracy(float(sol.t_events[1][0]))
    if not len(sol.t_events[0]):
        raise PistonShockError("piston condition theta(sigma) = sigma never met")
    b0 = float(sol.t_events[0][0])
    y_b0 = sol.y_events[0][0]
    if abs(y_b0[1] - b0) > tol * s0:
        raise PistonShockError("free-boundary residual exceeded the requested tolerance")

    margin = margin_fraction * (s0 - b0)
    below = solve_ivp(
        rhs, (b0, b0 - margin), y_b0, method="RK45",
        rtol=rtol, atol=rtol * 1e-3 * trace.rho_s, dense_output=True,
    )
    if below.status != 0:
        raise StiffnessError("continuation below the piston speed failed")

    # sample grid, clustered toward b0 where the free-boundary function flattens
    frac = np.concatenate(([0.0], np.geomspace(1e-6, 1.0, n_grid - 1)))
    grid = (b0 + (s0 - b0) * frac)[::-1]          # decreasing, s0 first, b0 last
    grid[0] = s0
    grid[-1] = b0
    vals = sol.sol(grid)
    rho, theta = vals[0], vals[1]
    drho, dtheta = rhs(grid, (rho, theta))
    w_p, w_m = riemann_arrays(gas, rho, theta)
    return SelfSimilarProfile(
        s0=float(s0), b0=b0, grid=grid,
        rho_of_sigma=rho, theta_of_sigma=theta,
        drho_dsigma=np.asarray(drho), dtheta_dsigma=np.asarray(dtheta),
        omega_plus=w_p, omega_minus=w_m,
        gas=gas, amb=amb, trace=trace, tol=tol,
        _dense=sol.sol, _below=below.sol, sigma_min=float(b0 - margin),
    )


@dataclass
class ProfileDiagnostics:
    rho_max: float
    rho_min: float
    max_shock_speed_minus_theta: float
    max_abs_drho: float
    max_abs_dtheta: float
    omega_plus_variation: float
    omega_minus_variation: float
    max_abs_domega: float       # equals sup |t dr_omega| for the similarity field
    strip_width: float

    def to_dict(self):
        return dict(self.__dict__)


def profile_diagnostics(profile, amb):
    """Measured magnitudes behind the zeroth/first-order profile estimates."""
    p = profile
    dw_p = p.dtheta_dsigma + np.sqrt(p.gas.gamma) * _pow(
        p.rho_of_sigma, 0.5 * (p.gas.gamma - 3.0)
    ) * p.drho_dsigma
    dw_m = p.dtheta_dsigma - np.sqrt(p.gas.gamma) * _pow(
        p.rho_of_sigma, 0.5 * (p.gas.gamma - 3.0)
    ) * p.drho_dsigma
    return ProfileDiagnostics(
        rho_max=float(p.rho_of_sigma.max()),
        rho_min=float(p.rho_of_sigma.min()),
        max_shock_speed_minus_theta=float((p.s0 - p.theta_of_sigma).max()),
        max_abs_drho=float(np.abs(p.drho_dsigma).max()),
        max_abs_dtheta=float(np.abs(p.dtheta_dsigma).max()),
        omega_plus_variation=float(np.abs(p.omega_plus[0] - p.omega_plus).max()),
        omega_minus_variation=float(np.abs(p.omega_minus[0] - p.omega_minus).max()),
        max_abs_domega=float(max(np.abs(dw_p).max(), np.abs(dw_m).max())),
        strip_width=float(p.s0 - p.b0),
    )


def flow_at(profile, r, t):
    """Physical-space state at (r, t): monotone-cubic interpolation at sigma = r/t."""
    if not t > 0:
        raise ValueError(f"flow_at needs t > 0, got {t!r}")
    sigma = r / t
    slack = 1e-12 * profile.s0
    if sigma < profile.b0 - slack or sigma > profile.s0 + slack:
        raise PistonShockError(
            f"sigma = {sigma:.8g} outside the profile range [{profile.b0:.8g}, {profile.s0:.8g}]"
        )
    sigma = min(max(sigma, profile.b0), profile.s0)
    rho_i, theta_i = profile._pchip
    return FluidState(float(rho_i(sigma)), float(theta_i(sigma)))
