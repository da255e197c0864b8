"""Empirical small-density scaling laws: sweep rho_inf, fit log-log exponents.

Each probe measures one positive quantity as a function of the ambient
density at fixed gas and shock data, fits log(value) against log(rho_inf) by
ordinary least squares, and compares the slope against the predicted
exponent. The operational form of a two-sided asymptotic order is a small
maximum deviation from the fitted line over a grid spanning several decades;
a preasymptotic largest decade is excluded (and reported) when it spoils the
fit.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PistonShockError
from .march import MarchControls, march, trace_characteristics
from .selfsimilar import integrate_profile, profile_diagnostics
from .shock import AmbientState, solve_rh

WORKERS_ENV = "PISTONSHOCK_WORKERS"

# probe name -> (level, reference exponent as a function of gamma, trend sign)
# trend sign: expected sign of d value / d rho_inf over the admissible grid
_PROBES = {
    "rho_s": ("trace", lambda g: 1.0 / g, +1),
    "s_prime_minus_v_s": ("trace", lambda g: (g - 1.0) / g, +1),
    "c_s": ("trace", lambda g: (g - 1.0) / (2.0 * g), +1),
    "lax_gap_plus": ("trace", lambda g: (g - 1.0) / (2.0 * g), +1),
    "lax_gap_minus": ("trace", lambda g: (g - 1.0) / (2.0 * g), +1),
    "strip_width": ("profile", lambda g: (g - 1.0) / g, +1),
    "omega_variation": ("profile", lambda g: (g - 1.0) / g, +1),
    "char_time_ratio": ("march", lambda g: (g - 1.0) / (2.0 * g), +1),
    "grad_sup": ("march", None, 0),   # upper bound direction only
}

PROBE_NAMES = tuple(_PROBES)


def reference_exponents(gas):
    """Predicted exponent per probe (grad_sup carries the bound exponent
    floor min(0, (1-gamma)/(2 gamma) + varpi0), resolved at sweep time)."""
    g = gas.gamma
    out = {}
    for name, (level, ref, _) in _PROBES.items():
        out[name] = None if ref is None else ref(g)
    return out


def _measure_trace(name, gas, rho_inf, s0):
    tr = solve_rh(gas, AmbientState(rho_inf), s0)
    if name == "rho_s":
        return tr.rho_s
    if name == "s_prime_minus_v_s":
        return tr.s_prime - tr.v_s
    if name == "c_s":
        return tr.c_s
    if name == "lax_gap_plus":
        return tr.lambda_plus_s - tr.s_prime
    if name == "lax_gap_minus":
        return tr.s_prime - tr.lambda_minus_s
    raise KeyError(name)


def _measure_profile(name, gas, rho_inf, s0):
    p = integrate_profile(gas, AmbientState(rho_inf), s0, tol=1e-10)
    if name == "strip_width":
        return p.s0 - p.b0
    d = profile_diagnostics(p, p.amb)
    return max(d.omega_plus_variation, d.omega_minus_variation)


def _measure_march(name, gas, rho_inf, traj, horizon, controls):
    amb = AmbientState(rho_inf)
    fld, piston, diag = march(gas, amb, traj, horizon, controls)
    if name == "char_time_ratio":
        return diag.char_time_ratio
    if name == "grad_sup":
        return diag.grad_sup
    raise KeyError(name)


@dataclass
class SweepReport:
    quantity: str
    rho_inf: list
    values: list
    alpha_hat: float
    alpha_ref: float
    residual_max: float
    tolerance: float
    passed: bool
    excluded: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    monotone: bool = True
    bound_only: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def _fit_loglog(rho, values):
    x = np.log(np.asarray(rho))
    y = np.log(np.asarray(values))
    slope, intercept = np.polyfit(x, y, 1)
    resid = np.max(np.abs(y - (slope * x + intercept)))
    return float(slope), float(resid)


def sweep(quantity, gas, s0_or_traj, rho_inf_grid, tolerance=None,
          horizon=None, controls=None, varpi0=0.25, fit_residual_limit=0.05):
    """Run one probe over a decreasing rho_inf grid and fit the exponent.

    s0_or_traj: a shock speed for trace/profile probes, a ShockTrajectory for
    march probes. Probe failures flag the point and truncate rather than
    abort. The largest-rho_inf decade is dropped, with a report, if it alone
    spoils the fit.
    """
    if quantity not in _PROBES:
        raise PistonShockError(f"unknown probe {quantity!r}; choose from {PROBE_NAMES}")
    level, ref, trend = _PROBES[quantity]
    grid = [float(r) for r in rho_inf_grid]
    if len(grid) < 2:
        raise PistonShockError("sweep needs at least two grid points to fit")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise PistonShockError("rho_inf grid must be strictly decreasing")

    def run_one(rho_inf):
        if level == "trace":
            return _measure_trace(quantity, gas, rho_inf, float(s0_or_traj))
        if level == "profile":
            return _measure_profile(quantity, gas, rho_inf, float(s0_or_traj))
        traj = s0_or_traj
        hz = horizon if horizon is not None else 3.0 * traj.head_end
        ctl = controls or MarchControls(layers_per_strip=32, anchor_rel_step=1e-2)
        return _measure_march(quantity, gas, rho_inf, traj, hz, ctl)

    n_workers = int(os.environ.get(WORKERS_ENV, "1") or "1")
    values = [None] * len(grid)
    failures = []
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futs = [pool.submit(run_one, r) for r in grid]
            for i, fut in enumerate(futs):
                try:
                    values[i] = float(fut.result())
                except PistonShockError as exc:
                    failures.append({"rho_inf": grid[i], "error": type(exc).__name__,
                                     "message": str(exc)})
    else:
        for i, r in enumerate(grid):
            try:
                values[i] = float(run_one(r))
            except PistonShockError as exc:
                failures.append({"rho_inf": grid[i], "error": type(exc).__name__,
                                 "message": str(exc)})

    good = [(r, v) for r, v in zip(grid, values) if v is not None and v > 0]
    if len(good) < 2:
        return SweepReport(quantity, grid, values, np.nan, np.nan, np.nan,
                           tolerance or np.nan, False, failures=failures)
    rho_ok = [r for r, _ in good]
    val_ok = [v for _, v in good]

    alpha_hat, resid = _fit_loglog(rho_ok, val_ok)
    excluded = []
    decades = np.log10(rho_ok[0] / rho_ok[-1])
    if resid > fit_residual_limit and decades > 3.0:
        cutoff = rho_ok[0] / 10.0
        keep = [i for i, r in enumerate(rho_ok) if r <= cutoff]
        if len(keep) >= 2:
            excluded = [rho_ok[i] for i in range(len(rho_ok)) if i not in keep]
            alpha_hat, resid = _fit_loglog([rho_ok[i] for i in keep],
                                           [val_ok[i] for i in keep])

    if ref is None:
        # bound direction only: decay no slower than the bound exponent allows
        g = gas.gamma
        floor = min(0.0, (1.0 - g) / (2.0 * g) + varpi0)
        tol = tolerance if tolerance is not None else 0.05
        passed = alpha_hat >= floor - tol
        alpha_ref = floor
        bound_only = True
    else:
        alpha_ref = ref(gas.gamma)
        tol = tolerance if tolerance is not None else (0.05 if level == "march" else 0.02)
        passed = abs(alpha_hat - alpha_ref) <= tol
        bound_only = False

    diffs = np.diff([v for v in val_ok])
    monotone = bool(np.all(diffs < 0)) if trend > 0 else True
    # grid is decreasing in rho_inf, so a +1 trend means values decrease too

    return SweepReport(
        quantity=quantity, rho_inf=grid, values=values,
        alpha_hat=alpha_hat, alpha_ref=alpha_ref, residual_max=resid,
        tolerance=tol, passed=passed and not failures,
        excluded=excluded, failures=failures, monotone=monotone,
        bound_only=bound_only,
    )


def export_reports_csv(reports, path):
    """Aggregate plotting table: log_rho_inf, log_value, probe."""
    with open(path, "w") as f:
        f.write("log_rho_inf,log_value,probe\n")
        for rep in reports:
            for r, v in zip(rep.rho_inf, rep.values):
                if v is None or not v > 0:
                    continue
                f.write(f"{np.log10(r)!r},{np.log10(v)!r},{rep.quantity}\n")
