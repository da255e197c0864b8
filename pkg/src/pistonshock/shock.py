"""Jump conditions on the leading shock and prescribed-trajectory handling.

The shock moves into still gas (rho_inf, 0). Given the instantaneous speed
s'(t), the jump system

    (rho_s - rho_inf) s' = rho_s v_s
    rho_s v_s s'         = rho_s v_s^2 + rho_s^gamma - rho_inf^gamma
    rho_s > rho_inf

reduces to a scalar root problem in the density ratio k = rho_s/rho_inf:
ratio_response(k) = k (k^gamma - 1)/(k - 1) equals s'^2 rho_inf^(1-gamma).
ratio_response is strictly increasing on k > 1 with limit gamma at k -> 1,
so an admissible shock exists iff the target exceeds gamma, and is unique.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvariantBreach, NoAdmissibleShock, PistonShockError
from .gas import _pow, eigenvalue_arrays, riemann_arrays


@dataclass(frozen=True)
class AmbientState:
    """Still gas ahead of the shock: density rho_inf > 0, velocity 0."""

    rho_inf: float

    def __post_init__(self):
        if not (np.isfinite(self.rho_inf) and self.rho_inf > 0):
            raise ValueError(f"rho_inf must be a positive finite number, got {self.rho_inf!r}")


@dataclass(frozen=True)
class ShockTrace:
    """Downstream state and derived quantities on the shock at one instant."""

    t: float
    s_prime: float
    rho_s: float
    v_s: float
    k: float
    c_s: float
    lambda_plus_s: float
    lambda_minus_s: float
    w_plus_s: float
    w_minus_s: float


@dataclass(frozen=True)
class TraceDerivatives:
    """Time derivatives along the shock and spatial invariant gradients there."""

    t: float
    drho_s_dt: float
    dv_s_dt: float
    dw_plus_s_dt: float
    dw_minus_s_dt: float
    dr_w_plus_S: float
    dr_w_minus_S: float


@dataclass(frozen=True)
class LaxReport:
    """Entropy/Lax margins of a shock trace; all must be strictly positive."""

    margin_plus: float        # lambda_+s - s'
    margin_minus: float       # s' - lambda_-s
    margin_subsonic: float    # gamma rho_s^(gamma-1) - (v_s - s')^2
    margin_inflow: float      # s' - v_s
    ok: bool


def ratio_response(gamma, k):
    """k (k^gamma - 1)/(k - 1), the compression-ratio response function."""
    k = np.asarray(k, dtype=float)
    # expm1/log1p form avoids cancellation as k -> 1
    out = k * np.expm1(gamma * np.log1p(k - 1.0)) / (k - 1.0)
    return out if out.ndim else float(out)


def ratio_response_prime(gamma, k):
    k = np.asarray(k, dtype=float)
    kg = np.exp(gamma * np.log(k))
    num = ((gamma + 1.0) * kg - 1.0) * (k - 1.0) - (k * kg - k)
    out = num / (k - 1.0) ** 2
    return out if out.ndim else float(out)


def solve_compression_ratio(gamma, target, rel_tol=1e-14, max_iter=80):
    """Vectorized root of ratio_response(k) = target for k > 1.

    Bracketed, bisection-initialized Newton on log k; globally convergent
    because the response is smooth and strictly increasing. ``target`` may be
    a scalar or array; every entry must exceed gamma.
    """
    target = np.asarray(target, dtype=float)
    scalar = target.ndim == 0
    tgt = np.atleast_1d(target).astype(float)
    if np.any(tgt <= gamma):
        bad = np.argmax(tgt <= gamma)
        raise NoAdmissibleShock(np.nan, np.nan, gamma, float(tgt[bad]))

    lo = np.full_like(tgt, np.log1p(1e-13))
    # ratio_response(k) >= k^gamma for k > 1, so this upper end always brackets
    hi = np.log(np.exp(np.log(tgt) / gamma) + 1.0)
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        high = ratio_response(gamma, np.exp(mid)) > tgt
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        k = np.exp(x)
        f = ratio_response(gamma, k)
        err = f - tgt
        if np.all(np.abs(err) <= rel_tol * tgt):
            break
        high = err > 0
        hi = np.where(high, x, hi)
        lo = np.where(high, lo, x)
        step = err / (ratio_response_prime(gamma, k) * k)
        xn = x - step
        inside = (xn > lo) & (xn < hi)
        x = np.where(inside, xn, 0.5 * (lo + hi))
    else:
        raise PistonShockError("compression-ratio root solve did not converge")
    k = np.exp(x)
    return float(k[0]) if scalar else k.reshape(target.shape)


def trace_arrays(gas, amb, s_prime, t=None):
    """Vectorized shock trace: returns a dict of arrays over s_prime."""
    sp = np.asarray(s_prime, dtype=float)
    g = gas.gamma
    ri = amb.rho_inf
    target = sp**2 * _pow(ri, 1.0 - g)
    if np.any(target <= g):
        bad = int(np.argmax(np.atleast_1d(target <= g)))
        spb = float(np.atleast_1d(sp).ravel()[bad])
        raise NoAdmissibleShock(spb, ri, g, float(np.atleast_1d(target).ravel()[bad]))
    k = solve_compression_ratio(g, target)
    rho_s = k * ri
    v_s = (1.0 - 1.0 / k) * sp
    c_s = np.sqrt(g * _pow(rho_s, g - 1.0))
    w_p, w_m = riemann_arrays(gas, rho_s, v_s)
    lam_m, lam_p = eigenvalue_arrays(gas, w_p, w_m)
    return {
        "t": np.full_like(sp, np.nan) if t is None else np.broadcast_to(t, sp.shape).astype(float),
        "s_prime": sp, "k": k, "rho_s": rho_s, "v_s": v_s, "c_s": c_s,
        "lambda_plus_s": lam_p, "lambda_minus_s": lam_m,
        "w_plus_s": w_p, "w_minus_s": w_m,
    }


def solve_rh(gas, amb, s_prime, t=float("nan")):
    """Unique admissible downstream state for shock speed s_prime > 0."""
    if not s_prime > 0:
        raise ValueError(f"shock speed must be positive, got {s_prime!r}")
    d = trace_arrays(gas, amb, float(s_prime), t=t)
    return ShockTrace(
        t=float(t), s_prime=float(s_prime), rho_s=float(d["rho_s"]), v_s=float(d["v_s"]),
        k=float(d["k"]), c_s=float(d["c_s"]),
        lambda_plus_s=float(d["lambda_plus_s"]), lambda_minus_s=float(d["lambda_minus_s"]),
        w_plus_s=float(d["w_plus_s"]), w_minus_s=float(d["w_minus_s"]),
    )


def rh_residuals(gas, amb, trace):
    """Relative residuals of both jump relations for a computed trace."""
    g = gas.gamma
    ri = amb.rho_inf
    scale = max(1.0, trace.s_prime**2 * ri)
    r1 = (trace.rho_s - ri) * trace.s_prime - trace.rho_s * trace.v_s
    r2 = trace.rho_s * trace.v_s * trace.s_prime - (
        trace.rho_s * trace.v_s**2 + _pow(trace.rho_s, g) - _pow(ri, g)
    )
    return abs(r1) / scale, abs(r2) / scale


def check_lax(trace):
    """Entropy/Lax structure of a trace; raises InvariantBreach on violation."""
    report = LaxReport(
        margin_plus=trace.lambda_plus_s - trace.s_prime,
        margin_minus=trace.s_prime - trace.lambda_minus_s,
        margin_subsonic=trace.c_s**2 - (trace.v_s - trace.s_prime) ** 2,
        margin_inflow=trace.s_prime - trace.v_s,
        ok=True,
    )
    if not (
        report.margin_plus > 0
        and report.margin_minus > 0
        and report.margin_subsonic > 0
        and report.margin_inflow > 0
        and trace.k > 1
    ):
        raise InvariantBreach(f"Lax/entropy margins violated: {report}")
    return report


# ---------------------------------------------------------------------------
# prescribed trajectories


@dataclass(frozen=True)
class _Piece:
    """One trajectory piece on [t0, t1]: either constant speed or a smooth
    speed ramp v0 -> v1 with ramp'(0) = ramp'(1) = 0 (cubic smoothstep in s')."""

    t0: float
    t1: float
    s0: float      # s(t0)
    v0: float
    v1: float
    kind: str      # "linear" | "blend"

    def s(self, t):
        dt = t - self.t0
        if self.kind == "linear":
            return self.s0 + self.v0 * dt
        span = self.t1 - self.t0
        u = dt / span
        # integral of v0 + dv (3u^2 - 2u^3)
        return self.s0 + self.v0 * dt + (self.v1 - self.v0) * span * (u**3 - 0.5 * u**4)

    def s_prime(self, t):
        if self.kind == "linear":
            return self.v0 + 0.0 * t
        u = (t - self.t0) / (self.t1 - self.t0)
        return self.v0 + (self.v1 - self.v0) * u * u * (3.0 - 2.0 * u)

    def s_double_prime(self, t):
        if self.kind == "linear":
            return 0.0 * t
        span = self.t1 - self.t0
        u = (t - self.t0) / span
        return (self.v1 - self.v0) * 6.0 * u * (1.0 - u) / span


class ShockTrajectory:
    """Prescribed leading-shock path s(t), t > 0, with s(0) = 0.

    A mandatory constant-speed head occupies (0, head_end]; analytic blend or
    linear pieces (C2 by construction) or a sampled cubic-spline table follow.
    Metadata kappa1..kappa4, varpi0 feeds condition checking.
    """

    def __init__(self, head_speed, head_end, pieces=(), table=None,
                 kappa1=None, kappa2=None, kappa4=1.0, varpi0=0.25):
        if not head_speed > 0:
            raise ValueError("head speed must be positive")
        if not head_end > 0:
            raise ValueError("head end time must be positive")
        self.head_speed = float(head_speed)
        self.head_end = float(head_end)
        self.kappa1 = float(kappa1) if kappa1 is not None else 0.5 * head_speed
        self.kappa2 = float(kappa2) if kappa2 is not None else 2.0 * head_speed
        self.kappa3 = self.head_end
        self.kappa4 = float(kappa4)
        self.varpi0 = float(varpi0)
        if not (self.kappa1 > 0 and self.kappa2 > self.kappa1):
            raise ValueError("need 0 < kappa1 < kappa2")
        self._pieces = list(pieces)
        self._table = table
        self._knots = np.array([p.t0 for p in self._pieces] + [np.inf])
        v = head_speed
        for p in self._pieces:
            if abs(p.v0 - v) > 1e-12 * max(1.0, abs(v)):
                raise ValueError("trajectory pieces must join with continuous speed")
            v = p.v1
        self.final_speed = v

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, speed, head_end, **kw):
        """Pure constant-speed shock s(t) = speed * t."""
        return cls(speed, head_end, pieces=(), **kw)

    @classmethod
    def from_segments(cls, head_speed, head_end, segments, **kw):
        """Build from typed records after the head.

        Each record: {"kind": "linear", "t_end": T} keeps the current speed, or
        {"kind": "poly_blend", "t_end": T, "target_speed": v} ramps to v.
        """
        pieces = []
        t = float(head_end)
        s = head_speed * t
        v = float(head_speed)
        for seg in segments:
            kind = seg.get("kind")
            t_end = float(seg.get("t_end", -1.0))
            if t_end <= t:
                raise ValueError(f"segment t_end {t_end} must exceed segment start {t}")
            if kind == "linear":
                piece = _Piece(t, t_end, s, v, v, "linear")
            elif kind == "poly_blend":
                v1 = float(seg["target_speed"])
                if v1 <= 0:
                    raise ValueError("target_speed must be positive")
                piece = _Piece(t, t_end, s, v, v1, "blend")
            else:
                raise ValueError(f"unknown segment kind {kind!r}")
            pieces.append(piece)
            s = piece.s(t_end)
            v = piece.v1
            t = t_end
        return cls(head_speed, head_end, pieces=pieces, **kw)

    @classmethod
    def from_table(cls, t, s, head_speed, head_end, **kw):
        """Sampled continuation: cubic spline through (t, s), t[0] == head_end.

        The spline clamps s'(head_end) to the head speed; the residual s''
        jump at the join is reported by validate_trajectory, not hidden.
        """
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if t.ndim != 1 or t.size < 4 or np.any(np.diff(t) <= 0) or t[0] <= 0:
            raise ValueError("table needs >= 4 strictly increasing positive times")
        if abs(t[0] - head_end) > 1e-9 * head_end:
            raise ValueError("table must start exactly at the head end time")
        if abs(s[0] - head_speed * head_end) > 1e-9 * abs(head_speed * head_end):
            raise ValueError("table must join the head continuously: s[0] = head_speed * head_end")
        spline = CubicSpline(t, s, bc_type=((1, float(head_speed)), (2, 0.0)))
        fine = np.linspace(t[0], t[-1], 4097)
        if np.any(spline(fine, 1) <= 0):
            raise ValueError("table spline produced a non-positive shock speed")
        obj = cls(head_speed, head_end, pieces=(), table=(spline, float(t[-1])), **kw)
        return obj

    # -- evaluation ---------------------------------------------------------

    def _eval(self, t, deriv):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("trajectory defined for t >= 0 only")
        out = np.empty_like(t)
        head = t <= self.head_end
        if deriv == 0:
            out[head] = self.head_speed * t[head]
        elif deriv == 1:
            out[head] = self.head_speed
        else:
            out[head] = 0.0
        rest = ~head
        if np.any(rest):
            tr = t[rest]
            vals = np.empty_like(tr)
            if self._table is not None:
                spline, t_last = self._table
                inside = tr <= t_last
                if np.any(inside):
                    vals[inside] = spline(tr[inside], deriv) if deriv else spline(tr[inside])
                if np.any(~inside):
                    # constant-speed extension beyond the table
                    te = tr[~inside]
                    v_end = float(spline(t_last, 1))
                    s_end = float(spline(t_last))
                    vals[~inside] = (
                        s_end + v_end * (te - t_last) if deriv == 0
                        else (v_end if deriv == 1 else 0.0)
                    )
            elif self._pieces:
                idx = np.searchsorted(self._knots, tr, side="right") - 1
                idx = np.clip(idx, 0, len(self._pieces) - 1)
                last = self._pieces[-1]
                for i, p in enumerate(self._pieces):
                    m = (idx == i) & (tr <= p.t1)
                    if np.any(m):
                        vals[m] = (p.s(tr[m]), p.s_prime(tr[m]), p.s_double_prime(tr[m]))[deriv]
                beyond = tr > last.t1
                if np.any(beyond):
                    tb = tr[beyond]
                    vals[beyond] = (
                        last.s(last.t1) + last.v1 * (tb - last.t1) if deriv == 0
                        else (last.v1 if deriv == 1 else 0.0)
                    )
            else:
                vals = (self.head_speed * tr, np.full_like(tr, self.head_speed),
                        np.zeros_like(tr))[deriv]
            out[rest] = vals
        return out if out.ndim else float(out)

    def s(self, t):
        return self._eval(t, 0)

    def s_prime(self, t):
        return self._eval(t, 1)

    def s_double_prime(self, t):
        return self._eval(t, 2)

    @property
    def knot_times(self):
        ks = [self.head_end] + [p.t1 for p in self._pieces]
        if self._table is not None:
            ks.append(self._table[1])
        return ks


# ---------------------------------------------------------------------------
# trace derivatives and boundary gradients


def trace_derivatives(gas, amb, traj, t):
    """d/dt of the shock trace plus the invariant gradients on the shock.

    drho_s/dt comes from differentiating the squared-speed jump relation
    s'^2 = rho_s (rho_s^g - rho_inf^g) / ((rho_s - rho_inf) rho_inf) in rho_s;
    the invariant gradients use the characteristic relation on the shock,

        dr_w+- |_S = (dw+-_s/dt +- S) / (s' - lambda+-_s),
        S = (gamma-1)(w+_s^2 - w-_s^2)/(4 s(t)) = 2 c_s v_s / s(t).

    The sign convention follows the diagonal system with sources -+ S, the
    form that the self-similar field satisfies identically.
    """
    if not t > 0:
        raise ValueError(f"trace derivatives need t > 0, got {t!r}")
    g = gas.gamma
    ri = amb.rho_inf
    sp = float(traj.s_prime(t))
    spp = float(traj.s_double_prime(t))
    if not np.isfinite(spp):
        raise PistonShockError(f"trajectory second derivative unavailable at t = {t}")
    tr = solve_rh(gas, amb, sp, t=t)
    rho = tr.rho_s
    # d/d rho of the squared-speed relation
    rg = _pow(rho, g)
    rig = _pow(ri, g)
    dspeed2_drho = (
        ((g + 1.0) * rg - rig) * (rho - ri) - (rho * rg - rho * rig)
    ) / ((rho - ri) ** 2 * ri)
    drho_dt = 2.0 * sp * spp / dspeed2_drho
    dv_dt = (1.0 - ri / rho) * spp + sp * ri / rho**2 * drho_dt
    dc_term = tr.c_s / rho * drho_dt          # (2/(g-1)) dc_s/dt
    dwp_dt = dv_dt + dc_term
    dwm_dt = dv_dt - dc_term
    s_here = float(traj.s(t))
    src = (g - 1.0) * (tr.w_plus_s**2 - tr.w_minus_s**2) / (4.0 * s_here)
    dr_wp = (dwp_dt + src) / (sp - tr.lambda_plus_s)
    dr_wm = (dwm_dt - src) / (sp - tr.lambda_minus_s)
    return TraceDerivatives(
        t=float(t), drho_s_dt=float(drho_dt), dv_s_dt=float(dv_dt),
        dw_plus_s_dt=float(dwp_dt), dw_minus_s_dt=float(dwm_dt),
        dr_w_plus_S=float(dr_wp), dr_w_minus_S=float(dr_wm),
    )


# ---------------------------------------------------------------------------
# trajectory validation


@dataclass
class TrajectoryValidation:
    a1_pass: bool
    a1_speed_min: float
    a1_speed_max: float
    a2_pass: bool
    a3_pass: bool
    a3_sup: float
    a3_bound: float
    c2_join_jumps: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return self.a1_pass and self.a2_pass and self.a3_pass


def validate_trajectory(traj, amb, horizon=None, n_samples=10000):
    """Check (A1) speed bounds, (A2) constant-speed head, (A3) sup |t s''|.

    (A1)/(A3) are checked analytically per piece where the piece is linear or
    a monotone speed ramp, and on a log-uniform grid of at least n_samples
    points otherwise; the grid also guards the table path. Always returns a
    report, never raises.
    """
    if horizon is None:
        horizon = 10.0 * max(traj.knot_times)
    t_lo = min(1e-6 * traj.head_end, traj.head_end * 0.5)
    grid = np.geomspace(t_lo, horizon, int(n_samples))
    # make sure blend interiors are represented even on coarse grids
    extra = []
    for p in traj._pieces:
        extra.append(np.linspace(p.t0, min(p.t1, horizon), 1024))
    if traj._table is not None:
        extra.append(np.linspace(traj.head_end, min(traj._table[1], horizon), 4096))
    if extra:
        grid = np.unique(np.concatenate([grid] + extra))
        grid = grid[(grid > 0) & (grid <= horizon)]
    sp = traj.s_prime(grid)
    spp = traj.s_double_prime(grid)

    violations = []
    a1 = bool(np.all((sp > traj.kappa1) & (sp < traj.kappa2)))
    if not a1:
        bad = grid[(sp <= traj.kappa1) | (sp >= traj.kappa2)]
        violations.append(
            f"(A1) speed outside ({traj.kappa1}, {traj.kappa2}) on t in "
            f"[{bad.min():.6g}, {bad.max():.6g}]"
        )
    # the head is constant speed by construction; (A2) only needs head_end > 0
    head_grid = grid[grid < traj.head_end]
    a2 = traj.head_end > 0 and bool(np.all(traj.s_double_prime(head_grid) == 0.0))
    if not a2:
        violations.append("(A2) head segment is not exactly constant speed")

    a3_sup = float(np.max(np.abs(grid * spp)))
    a3_bound = float(traj.kappa4 * amb.rho_inf**traj.varpi0)
    a3 = a3_sup < a3_bound
    if not a3:
        worst = grid[np.argmax(np.abs(grid * spp))]
        violations.append(
            f"(A3) sup |t s''| = {a3_sup:.6g} >= bound {a3_bound:.6g} (worst near t = {worst:.6g})"
        )

    joins = {}
    for tk in traj.knot_times:
        if tk >= horizon:
            continue
        eps = 1e-7 * tk
        joins[tk] = {
            "ds": float(abs(traj.s(tk + eps) - traj.s(tk - eps))),
            "ds_prime": float(abs(traj.s_prime(tk + eps) - traj.s_prime(tk - eps))),
            "ds_double_prime": float(
                abs(traj.s_double_prime(tk + eps) - traj.s_double_prime(tk - eps))
            ),
        }
    return TrajectoryValidation(
        a1_pass=a1, a1_speed_min=float(sp.min()), a1_speed_max=float(sp.max()),
        a2_pass=a2, a3_pass=a3, a3_sup=a3_sup, a3_bound=a3_bound,
        c2_join_jumps=joins, violations=violations,
    )
