"""Inverse solver for variable shock speed: inward semi-characteristic marching.

The strip between piston and shock is meshed by layer curves anchored to the
shock,

    l_j(t) = s(t) - j * delta * t,     j = 0, 1, 2, ...

so in the constant-speed head the layers are exact similarity rays. Nodes sit
at shared anchor times. A node P on layer j+1 is computed from layer j by
tracing the forward characteristic (speed lambda+) ahead in time and the
backward one (lambda-) behind in time until they cross the layer-j curve,
then integrating the diagonal system

    d w+/dtau along lambda+ = -(gamma-1)(w+^2 - w-^2)/(4 r)
    d w-/dtau along lambda- = +(gamma-1)(w+^2 - w-^2)/(4 r)

with a trapezoid corrector (radius linear in time between the endpoints).
Both crossings are guaranteed while lambda- > 0 and the layer slopes stay
between the eigenvalues, which is the thin-strip small-density regime;
violations raise instead of degrading.

Characteristic feet that drop below the head end time are served by the
self-similar profile (the head field is exactly self-similar there), which
also closes the mesh at the join. The piston is the particle path
b' = v(b, t) started from the self-similar piston speed at the join and
integrated through the reconstructed field; layers are added until the piston
stays strictly inside the covered strip with a full layer of margin.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoverageFailure,
    GradientBlowup,
    MarchingBreakdown,
    PistonShockError,
    VacuumFormation,
)
from .gas import eigenvalue_arrays, primitive_arrays
from .selfsimilar import integrate_profile
from .shock import trace_arrays, trace_derivatives, validate_trajectory


@dataclass(frozen=True)
class MarchControls:
    """Step and tolerance settings for the inward march."""

    anchor_rel_step: float = 5e-3       # max (t_{i+1} - t_i) / t_i
    speed_rel_step: float = 1e-3        # max |delta s'| / s' per anchor step
    layers_per_strip: int = 64          # layers across the initial strip width
    corrector_iterations: int = 4
    refine: float = 1.0                 # divides anchor step and layer depth together
    coverage_margin_layers: int = 1
    max_layers: int = 4096
    piston_rel_step: float = 2e-3       # piston RK4 time step / t
    selfsim_tol: float = 1e-10
    extension_safety: float = 1.5       # headroom factor on the anchor extension
    probe_count: int = 5                # interior probes for characteristic timing

    def scaled(self, refine):
        """Same controls at a different refinement level."""
        d = dict(self.__dict__)
        d["refine"] = refine
        return MarchControls(**d)


@dataclass
class MarchDiagnostics:
    strip_width_ratio: float = np.nan
    char_time_ratio: float = np.nan
    grad_sup: float = np.nan
    residual_sup: float = np.nan
    slip_residual_sup: float = np.nan
    join_speed_jump: float = np.nan
    n_layers: int = 0
    n_anchors: int = 0
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        d = dict(self.__dict__)
        d["meta"] = dict(self.meta)
        return d


class FlowField:
    """Layered strip mesh anchored to the shock, with invariants per node.

    Layer j, anchor i is the node (r, t) = (s(t_i) - j delta t_i, t_i); layer
    0 carries the exact jump-condition trace. ``valid[j]`` is the number of
    usable anchors of layer j; coverage shrinks at the late-time end because
    forward characteristics outrun the mesh, so the anchor grid extends past
    the requested horizon.
    """

    def __init__(self, gas, amb, traj, profile, t_grid, delta):
        self.gas = gas
        self.amb = amb
        self.traj = traj
        self.profile = profile
        self.t_grid = t_grid
        self.delta = delta
        self.join_time = traj.head_end
        self._s_grid = traj.s(t_grid)
        d0 = trace_arrays(gas, amb, traj.s_prime(t_grid))
        self.w_plus = d0["w_plus_s"][None, :].copy()
        self.w_minus = d0["w_minus_s"][None, :].copy()
        self.valid = [t_grid.size]
        self.depth = 0

    # -- node coordinates ----------------------------------------------------

    def node_r(self, j):
        return self._s_grid - j * self.delta * self.t_grid

    def layer_cover_time(self, j):
        return self.t_grid[self.valid[j] - 1]

    def covered_depth_at(self, t):
        """Deepest continuous layer index usable at time t."""
        j = self.depth
        while j >= 0 and t > self.layer_cover_time(j):
            j -= 1
        return j

    # -- interpolation -------------------------------------------------------

    def _layer_values_at(self, j, tau):
        """Cubic Lagrange along layer j at times tau, inside its validity."""
        nv = self.valid[j]
        tg = self.t_grid
        idx = np.searchsorted(tg[:nv], tau) - 1
        idx = np.clip(idx, 1, nv - 3)
        wp = np.zeros_like(tau)
        wm = np.zeros_like(tau)
        for off in range(-1, 3):
            basis = np.ones_like(tau)
            for other in range(-1, 3):
                if other == off:
                    continue
                basis *= (tau - tg[idx + other]) / (tg[idx + off] - tg[idx + other])
            wp += basis * self.w_plus[j, idx + off]
            wm += basis * self.w_minus[j, idx + off]
        return wp, wm

    def _selfsim_w(self, sigma):
        sigma = np.minimum(sigma, self.profile.s0)
        rho, theta = self.profile.sample(sigma)
        c = np.sqrt(self.gas.gamma * rho ** (self.gas.gamma - 1.0))
        span = 2.0 * c / (self.gas.gamma - 1.0)
        return theta + span, theta - span

    def layer_data(self, j, tau):
        """Invariants on layer curve j at times tau.

        Early times (before the join) come from the self-similar head; layer 0
        at any later time is the exact shock trace.
        """
        tau = np.asarray(tau, dtype=float)
        wp = np.empty_like(tau)
        wm = np.empty_like(tau)
        early = tau < self.join_time
        if early.any():
            te = tau[early]
            sig = self.traj.s(te) / te - j * self.delta
            wp[early], wm[early] = self._selfsim_w(sig)
        late = ~early
        if late.any():
            tl = tau[late]
            if j == 0:
                d = trace_arrays(self.gas, self.amb, self.traj.s_prime(tl))
                wp[late], wm[late] = d["w_plus_s"], d["w_minus_s"]
            else:
                if np.any(tl > self.layer_cover_time(j) * (1 + 1e-12)):
                    raise CoverageFailure(f"layer {j} queried beyond its covered time range")
                wp[late], wm[late] = self._layer_values_at(j, tl)
        return wp, wm

    def invariants_at(self, r, t):
        """(w+, w-) anywhere in the covered strip; self-similar for t <= join."""
        scalar = np.ndim(r) == 0 and np.ndim(t) == 0
        r = np.atleast_1d(np.asarray(r, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        r, t = np.broadcast_arrays(r.copy(), t.copy())
        wp = np.empty_like(r)
        wm = np.empty_like(r)
        early = t <= self.join_time
        if early.any():
            sig = r[early] / t[early]
            wp[early], wm[early] = self._selfsim_w(sig)
        late = ~early
        if late.any():
            rl, tl = r[late], t[late]
            x = (self.traj.s(tl) - rl) / (self.delta * tl)    # continuous depth
            if np.any(x < -1e-9):
                raise PistonShockError("query outside the strip (above the shock)")
            x = np.clip(x, 0.0, None)
            if np.any(x > self.depth):
                raise CoverageFailure(
                    f"query at depth {float(x.max()):.3f} layers exceeds marched depth {self.depth}"
                )
            j0 = np.clip(np.floor(x).astype(int), 0, self.depth - 2)
            vals_p = np.zeros((3, tl.size))
            vals_m = np.zeros((3, tl.size))
            for a in range(3):
                stencil = j0 + a
                for j in np.unique(stencil):
                    m = stencil == j
                    if np.any(tl[m] > self.layer_cover_time(j) * (1 + 1e-12)):
                        raise CoverageFailure(
                            f"layer {j} lacks coverage at t up to {tl[m].max():.6g}"
                        )
                    vals_p[a, m], vals_m[a, m] = self._layer_values_at(j, tl[m])
            u = x - j0
            b0 = 0.5 * (u - 1.0) * (u - 2.0)
            b1 = -u * (u - 2.0)
            b2 = 0.5 * u * (u - 1.0)
            wp[late] = b0 * vals_p[0] + b1 * vals_p[1] + b2 * vals_p[2]
            wm[late] = b0 * vals_m[0] + b1 * vals_m[1] + b2 * vals_m[2]
        if scalar:
            return float(wp[0]), float(wm[0])
        return wp, wm

    def state_at(self, r, t):
        wp, wm = self.invariants_at(r, t)
        return primitive_arrays(self.gas, wp, wm)

    def eigen_at(self, r, t):
        wp, wm = self.invariants_at(r, t)
        return eigenvalue_arrays(self.gas, wp, wm)

    # -- exports ---------------------------------------------------------------

    def export_csv(self, path):
        with open(path, "w") as f:
            f.write("t,r,rho,v,w_plus,w_minus,layer\n")
            for j in range(self.depth + 1):
                nv = self.valid[j]
                r_row = self.node_r(j)[:nv]
                wp = self.w_plus[j, :nv]
                wm = self.w_minus[j, :nv]
                rho, v = primitive_arrays(self.gas, wp, wm)
                for i in range(nv):
                    f.write(
                        f"{self.t_grid[i]!r},{r_row[i]!r},{rho[i]!r},{v[i]!r},"
                        f"{wp[i]!r},{wm[i]!r},{j}\n"
                    )


class PistonTrajectory:
    """Reconstructed piston path: self-similar ray up to the join, then the
    integrated particle path as (t, b, b') samples with C1 Hermite evaluation."""

    def __init__(self, t, b, b_prime, b0, join_time, head_profile=None):
        self.t = np.asarray(t, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.b_prime = np.asarray(b_prime, dtype=float)
        self.b0 = float(b0)
        self.join_time = float(join_time)
        self.head_profile = head_profile

    @classmethod
    def selfsimilar(cls, profile, horizon, n=256):
        """Constant-speed piston b(t) = b0 t out to the horizon."""
        t = np.linspace(1e-6, horizon, n)
        return cls(t, profile.b0 * t, np.full_like(t, profile.b0),
                   profile.b0, horizon, head_profile=profile)

    def _hermite(self, t, deriv=0):
        tt = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.t, tt) - 1, 0, self.t.size - 2)
        h = self.t[idx + 1] - self.t[idx]
        u = (tt - self.t[idx]) / h
        b_lo, b_hi = self.b[idx], self.b[idx + 1]
        d_lo, d_hi = self.b_prime[idx], self.b_prime[idx + 1]
        if deriv == 0:
            h00 = (1 + 2 * u) * (1 - u) ** 2
            h10 = u * (1 - u) ** 2
            h01 = u * u * (3 - 2 * u)
            h11 = u * u * (u - 1)
            return h00 * b_lo + h10 * h * d_lo + h01 * b_hi + h11 * h * d_hi
        g00 = 6 * u * (u - 1) / h
        g10 = (1 - u) * (1 - 3 * u)
        g01 = -6 * u * (u - 1) / h
        g11 = u * (3 * u - 2)
        return g00 * b_lo + g10 * d_lo + g01 * b_hi + g11 * d_hi

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        head = t <= self.join_time
        out = np.where(head, self.b0 * t, 0.0)
        if np.any(~head):
            out = np.where(head, out, self._hermite(np.maximum(t, self.join_time)))
        return out if out.ndim else float(out)

    def eval_prime(self, t):
        t = np.asarray(t, dtype=float)
        head = t <= self.join_time
        out = np.where(head, self.b0, 0.0)
        if np.any(~head):
            out = np.where(head, out, self._hermite(np.maximum(t, self.join_time), 1))
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self.eval(t)

    def export_csv(self, path):
        with open(path, "w") as f:
            f.write("t,b,b_prime\n")
            for i in range(self.t.size):
                f.write(f"{self.t[i]!r},{self.b[i]!r},{self.b_prime[i]!r}\n")


# ---------------------------------------------------------------------------
# the march itself


def _anchor_grid(traj, t_start, t_end, controls):
    """Geometric-ish grid, refined where the shock speed changes quickly."""
    h_base = controls.anchor_rel_step / controls.refine
    ts = [t_start]
    t = t_start
    while t < t_end:
        sp = float(traj.s_prime(t))
        spp = abs(float(traj.s_double_prime(t)))
        h = h_base
        if spp > 0:
            h = min(h, controls.speed_rel_step / controls.refine * sp / (spp * t))
        t = t * (1.0 + max(h, 1e-7))
        ts.append(t)
    return np.array(ts)


def _source_plus(gas, wp, wm, r):
    return -(gas.gamma - 1.0) * (wp * wp - wm * wm) / (4.0 * r)


def _find_feet(traj, delta, j, r_node, t_node, lam, forward):
    """Crossing time of the straight-in-time characteristic with layer j:
    solves s(tau) - j delta tau = r_node + lam (tau - t_node) by Newton."""
    tau = t_node.copy()
    for _ in range(8):
        f = traj.s(tau) - j * delta * tau - r_node - lam * (tau - t_node)
        fp = traj.s_prime(tau) - j * delta - lam
        step = f / fp
        tau = tau - step
        if np.all(np.abs(step) <= 1e-14 * t_node):
            break
    return np.maximum(tau, t_node) if forward else np.minimum(tau, t_node)


def _march_one_layer(fld, j, controls):
    """Compute layer j+1 from layer j; returns the new layer's valid count."""
    gas = fld.gas
    traj = fld.traj
    delta = fld.delta
    nv = fld.valid[j]
    t_i = fld.t_grid[:nv]
    r_new = traj.s(t_i) - (j + 1) * delta * t_i
    wp = fld.w_plus[j, :nv].copy()
    wm = fld.w_minus[j, :nv].copy()

    t_cov = fld.layer_cover_time(j)
    tau_p = t_i
    for _ in range(controls.corrector_iterations):
        lam_m, lam_p = eigenvalue_arrays(gas, wp, wm)
        if np.any(lam_m <= 0):
            i_bad = int(np.argmax(lam_m <= 0))
            raise MarchingBreakdown(
                f"lambda- = {lam_m[i_bad]:.6g} <= 0 at t = {t_i[i_bad]:.6g}, layer {j + 1}; "
                "ambient density is outside the small-density validity regime"
            )
        tau_p = _find_feet(traj, delta, j, r_new, t_i, lam_p, forward=True)
        tau_m = _find_feet(traj, delta, j, r_new, t_i, lam_m, forward=False)
        qp_p, qm_p = fld.layer_data(j, np.minimum(tau_p, t_cov))
        qp_m, qm_m = fld.layer_data(j, tau_m)
        # second pass with the averaged characteristic slope
        _, lam_p_foot = eigenvalue_arrays(gas, qp_p, qm_p)
        lam_m_foot, _ = eigenvalue_arrays(gas, qp_m, qm_m)
        tau_p = _find_feet(traj, delta, j, r_new, t_i, 0.5 * (lam_p + lam_p_foot), forward=True)
        tau_m = _find_feet(traj, delta, j, r_new, t_i, 0.5 * (lam_m + lam_m_foot), forward=False)
        qp_p, qm_p = fld.layer_data(j, np.minimum(tau_p, t_cov))
        qp_m, qm_m = fld.layer_data(j, tau_m)
        r_foot_p = traj.s(tau_p) - j * delta * tau_p
        r_foot_m = traj.s(tau_m) - j * delta * tau_m
        src_p_node = _source_plus(gas, wp, wm, r_new)
        src_p_foot = _source_plus(gas, qp_p, qm_p, r_foot_p)
        src_m_node = -_source_plus(gas, wp, wm, r_new)
        src_m_foot = -_source_plus(gas, qp_m, qm_m, r_foot_m)
        wp_new = qp_p - 0.5 * (tau_p - t_i) * (src_p_node + src_p_foot)
        wm_new = qm_m + 0.5 * (t_i - tau_m) * (src_m_node + src_m_foot)
        wp, wm = wp_new, wm_new

    spread = wp - wm
    if np.any(spread <= 0):
        i_bad = int(np.argmax(spread <= 0))
        raise VacuumFormation(
            f"w+ - w- = {spread[i_bad]:.6g} <= 0 at t = {t_i[i_bad]:.6g}, layer {j + 1}"
        )
    fld.w_plus[j + 1, :nv] = wp
    fld.w_minus[j + 1, :nv] = wm
    # drop anchors whose forward foot needed data beyond layer-j coverage
    over = tau_p > t_cov
    nv_new = int(np.argmax(over)) if over.any() else nv
    if nv_new < 8:
        raise CoverageFailure(
            "anchor range collapsed while marching; increase extension_safety "
            "or shorten the horizon"
        )
    return nv_new


class _NeedDepth(Exception):
    def __init__(self, extra):
        self.extra = max(extra, 4)
        super().__init__(f"need {self.extra} more layers")


def _integrate_piston(fld, horizon, controls, margin):
    """RK4 on b' = v(b, t) from the join; raises _NeedDepth when the path plus
    margin layers would leave the marched depth."""
    traj = fld.traj
    t = fld.join_time
    b = fld.profile.b0 * t
    ts = [t]
    bs = [b]
    vs = [float(fld.state_at(b, t)[1])]
    dt_rel = controls.piston_rel_step / controls.refine
    while t < horizon:
        dt = min(dt_rel * t, horizon - t)
        t_ahead = t + dt
        depth_now = (traj.s(t) - b) / (fld.delta * t)
        required = depth_now + margin
        usable = fld.covered_depth_at(t_ahead)
        if required > usable:
            if fld.depth >= required:
                raise CoverageFailure(
                    f"time coverage at depth {required:.1f} ends before t = {t_ahead:.6g}; "
                    "increase extension_safety"
                )
            raise _NeedDepth(int(math.ceil(required)) - fld.depth)

        def v_of(bb, tt):
            return fld.state_at(bb, tt)[1]

        k1 = v_of(b, t)
        k2 = v_of(b + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = v_of(b + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = v_of(b + dt * k3, t + dt)
        b = b + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_ahead
        ts.append(t)
        bs.append(b)
        vs.append(v_of(b, t))
    return PistonTrajectory(ts, bs, vs, fld.profile.b0, fld.join_time,
                            head_profile=fld.profile)


def march(gas, amb, traj, horizon, controls=None):
    """Reconstruct (FlowField, PistonTrajectory, MarchDiagnostics).

    Preconditions: the trajectory satisfies (A1) and (A2), the jump system is
    admissible along it, and horizon exceeds the head end time.
    """
    controls = controls or MarchControls()
    kap3 = traj.head_end
    if not horizon > kap3:
        raise ValueError(f"horizon {horizon} must exceed the head end time {kap3}")
    check = validate_trajectory(traj, amb, horizon=horizon, n_samples=2000)
    if not (check.a1_pass and check.a2_pass):
        raise PistonShockError(
            "trajectory fails (A1)/(A2) validation: " + "; ".join(check.violations)
        )

    profile = integrate_profile(gas, amb, traj.head_speed, tol=controls.selfsim_tol,
                                margin_fraction=1.0)
    s0 = profile.s0
    width = s0 - profile.b0
    delta = 1.25 * width / (controls.layers_per_strip * controls.refine)
    # deepest layer whose sub-join closure the profile continuation can serve
    depth_cap = int(math.floor((s0 - profile.sigma_min) / delta)) - 2

    coarse_t = np.geomspace(kap3, 1.5 * horizon, 64)
    d = trace_arrays(gas, amb, traj.s_prime(coarse_t))
    sp_c = traj.s_prime(coarse_t)
    gap_minus = float(np.min(sp_c - d["lambda_minus_s"]))
    gap_plus = float(np.min(d["lambda_plus_s"] - sp_c))
    if np.any(d["lambda_minus_s"] <= 0):
        raise MarchingBreakdown(
            "lambda- <= 0 on the shock itself; inward sideways marching is invalid "
            f"(rho_inf = {amb.rho_inf} is outside the small-density regime)"
        )
    depth_est = int(math.ceil(1.05 * width / delta)) + controls.coverage_margin_layers + 2
    if depth_est * delta > 0.5 * min(gap_minus, gap_plus):
        raise MarchingBreakdown(
            f"layer slopes (total {depth_est * delta:.4g}) are not small against the "
            f"characteristic gaps ({gap_minus:.4g}, {gap_plus:.4g})"
        )
    # right-end loss per layer: forward-foot offset plus one anchor spacing
    h_eff = controls.anchor_rel_step / controls.refine
    ext = controls.extension_safety * depth_est * (delta / gap_plus + h_eff)
    t_ext = horizon * (1.0 + ext) + 4.0 * h_eff * horizon
    t_grid = _anchor_grid(traj, kap3, t_ext, controls)

    fld = FlowField(gas, amb, traj, profile, t_grid, delta)

    def add_layers(n):
        if fld.depth + n > controls.max_layers:
            raise CoverageFailure(
                f"piston not covered within max_layers = {controls.max_layers}"
            )
        if fld.depth + n > depth_cap:
            raise CoverageFailure(
                f"requested depth {fld.depth + n} exceeds the head-closure capability "
                f"{depth_cap}; the strip widened beyond the profile continuation margin"
            )
        fld.w_plus = np.vstack([fld.w_plus, np.zeros((n, t_grid.size))])
        fld.w_minus = np.vstack([fld.w_minus, np.zeros((n, t_grid.size))])
        target = fld.depth + n
        while fld.depth < target:
            j = fld.depth
            nv_new = _march_one_layer(fld, j, controls)
            fld.valid.append(nv_new)
            fld.depth = j + 1

    add_layers(depth_est)
    margin = controls.coverage_margin_layers + 1
    piston = None
    while piston is None:
        try:
            piston = _integrate_piston(fld, horizon, controls, margin)
        except _NeedDepth as need:
            add_layers(need.extra)

    diags = _collect_diagnostics(fld, piston, horizon, controls)
    return fld, piston, diags


def _collect_diagnostics(fld, piston, horizon, controls):
    t = piston.t
    widths = (fld.traj.s(t) - piston.b) / t
    mids = 0.5 * (t[:-1] + t[1:])
    slip = np.abs(piston.eval_prime(mids) - fld.state_at(piston.eval(mids), mids)[1])
    join_jump = abs(piston.b_prime[0] - piston.b0)

    grad = _mesh_gradients(fld)

    ratios = []
    probe_ts = np.geomspace(fld.join_time * 1.1, horizon * 0.85, controls.probe_count)
    for tp in probe_ts:
        r_mid = 0.5 * (fld.traj.s(tp) + piston.eval(tp))
        try:
            path_p = trace_characteristics(fld, (r_mid, tp), "plus")
            path_m = trace_characteristics(fld, (r_mid, tp), "minus")
        except (CoverageFailure, PistonShockError):
            continue
        ratios.append((path_p.terminal_time - tp) / tp)
        ratios.append((tp - path_m.terminal_time) / tp)
    char_ratio = float(np.max(ratios)) if ratios else np.nan

    residual = _characteristic_residual(fld)

    return MarchDiagnostics(
        strip_width_ratio=float(widths.max()),
        char_time_ratio=char_ratio,
        grad_sup=grad["grad_sup"],
        residual_sup=residual,
        slip_residual_sup=float(slip.max()),
        join_speed_jump=float(join_jump),
        n_layers=fld.depth,
        n_anchors=fld.t_grid.size,
        meta={
            "join_rule": "head field serves every characteristic foot below the join time",
            "join_time": fld.join_time,
            "layer_depth": fld.delta,
            "refine": controls.refine,
        },
    )


def _mesh_gradients(fld):
    """Invariant gradients by central differences across layers."""
    depth, n = fld.depth, fld.t_grid.size
    dwp = np.full((depth + 1, n), np.nan)
    dwm = np.full((depth + 1, n), np.nan)
    for j in range(1, depth):
        nv = min(fld.valid[j - 1], fld.valid[j], fld.valid[j + 1])
        dr = fld.node_r(j - 1)[:nv] - fld.node_r(j + 1)[:nv]
        dwp[j, :nv] = (fld.w_plus[j - 1, :nv] - fld.w_plus[j + 1, :nv]) / dr
        dwm[j, :nv] = (fld.w_minus[j - 1, :nv] - fld.w_minus[j + 1, :nv]) / dr
    with np.errstate(invalid="ignore"):
        tot = (np.abs(dwp) + np.abs(dwm)) * fld.t_grid[None, :]
    grad_sup = float(np.nanmax(tot)) if depth >= 2 else np.nan
    return {"dw_plus": dwp, "dw_minus": dwm, "grad_sup": grad_sup}


def _characteristic_residual(fld, max_nodes=40000):
    """Midpoint-rule residual of the diagonal system along re-traced feet.

    Measures d w/dtau minus the source with an evaluation independent of the
    trapezoid update; for a second-order field it scales with the square of
    the crossing step.
    """
    gas = fld.gas
    res = 0.0
    stride = max(1, (fld.depth * fld.t_grid.size) // max_nodes)
    for j in range(0, fld.depth, stride):
        safe_layer = min(j + 2, fld.depth)
        nv = max(min(fld.valid[safe_layer] - 2, fld.valid[j + 1]), 8)
        t_i = fld.t_grid[:nv]
        r_new = fld.node_r(j + 1)[:nv]
        wp = fld.w_plus[j + 1, :nv]
        wm = fld.w_minus[j + 1, :nv]
        lam_m, lam_p = eigenvalue_arrays(gas, wp, wm)
        tau_p = _find_feet(fld.traj, fld.delta, j, r_new, t_i, lam_p, forward=True)
        tau_m = _find_feet(fld.traj, fld.delta, j, r_new, t_i, lam_m, forward=False)
        t_cov = fld.layer_cover_time(j)
        keep = tau_p <= min(t_cov, fld.layer_cover_time(safe_layer))
        if not keep.any():
            continue
        qp_p, _ = fld.layer_data(j, tau_p[keep])
        _, qm_m = fld.layer_data(j, tau_m[keep])
        tm_p = 0.5 * (t_i[keep] + tau_p[keep])
        rm_p = 0.5 * (r_new[keep] + fld.traj.s(tau_p[keep]) - j * fld.delta * tau_p[keep])
        tm_m = 0.5 * (t_i[keep] + tau_m[keep])
        rm_m = 0.5 * (r_new[keep] + fld.traj.s(tau_m[keep]) - j * fld.delta * tau_m[keep])
        wpm, wmm = fld.invariants_at(rm_p, tm_p)
        wpm2, wmm2 = fld.invariants_at(rm_m, tm_m)
        dtau_p = tau_p[keep] - t_i[keep]
        dtau_m = t_i[keep] - tau_m[keep]
        ok = dtau_p > 1e-14 * t_i[keep]
        if ok.any():
            rp = (qp_p[ok] - wp[keep][ok]) / dtau_p[ok] - _source_plus(gas, wpm[ok], wmm[ok], rm_p[ok])
            res = max(res, float(np.max(np.abs(rp))))
        rm = (wm[keep] - qm_m) / dtau_m + _source_plus(gas, wpm2, wmm2, rm_m)
        res = max(res, float(np.max(np.abs(rm))))
    return res


# ---------------------------------------------------------------------------
# characteristic tracing and gradient transport


@dataclass
class CharPath:
    family: str
    ts: np.ndarray
    rs: np.ndarray
    terminal_time: float


def trace_characteristics(field, start, family):
    """Trace the forward (plus) or backward (minus) characteristic from
    ``start = (r, t)`` until it meets the shock; returns path and shock time."""
    r0, t0 = float(start[0]), float(start[1])
    s_at = field.traj.s
    if r0 > s_at(t0) + 1e-12 * t0:
        raise PistonShockError("start point lies outside the strip")
    if family not in ("plus", "minus"):
        raise ValueError(f"family must be 'plus' or 'minus', got {family!r}")
    sign = 1.0 if family == "plus" else -1.0

    def lam(r, t):
        lm, lp = field.eigen_at(r, t)
        return lp if family == "plus" else lm

    if abs(s_at(t0) - r0) <= 1e-12 * t0:
        return CharPath(family, np.array([t0]), np.array([r0]), t0)
    gap0 = abs(field.traj.s_prime(t0) - lam(r0, t0)) + 1e-12
    dt = sign * min(0.2 * field.delta * t0 / gap0, 5e-3 * t0)
    ts = [t0]
    rs = [r0]
    t, r = t0, r0
    for _ in range(200000):
        k1 = lam(r, t)
        k2 = lam(r + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = lam(r + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = lam(r + dt * k3, t + dt)
        r_new = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_new = t + dt
        if r_new >= s_at(t_new):
            g_lo = s_at(t) - r
            g_hi = s_at(t_new) - r_new
            frac = g_lo / (g_lo - g_hi)
            t_hit = t + frac * dt
            ts.append(t_hit)
            rs.append(s_at(t_hit))
            return CharPath(family, np.array(ts), np.array(rs), float(t_hit))
        t, r = t_new, r_new
        ts.append(t)
        rs.append(r)
    raise PistonShockError("characteristic never reached the shock (budget exhausted)")


@dataclass
class GradientTransport:
    dw_plus_mesh: np.ndarray
    dw_minus_mesh: np.ndarray
    grad_sup: float
    transported: list
    discrepancy: float


def transport_gradients(field, gas, n_paths=6, blowup_factor=1e6):
    """Invariant gradients two ways: mesh differencing across layers, and
    integration of the differentiated diagonal system along characteristics
    seeded with the jump-condition boundary gradients.

    For y = dr_w+ along the forward characteristic,

        dy/dtau = -((g+1)/4) y^2 - ((3-g)/4) y z
                  + (g-1)(w+^2 - w-^2)/(4 r^2) - (g-1)(w+ y - w- z)/(2 r),

    with z = dr_w- taken from the mesh, and symmetrically for the minus
    family. Divergence raises GradientBlowup with its location.
    """
    if field.depth < 3:
        raise PistonShockError("gradient transport needs at least 3 marched layers")
    g = gas.gamma
    mesh = _mesh_gradients(field)
    dwp_m, dwm_m = mesh["dw_plus"], mesh["dw_minus"]

    def mesh_grad(r, t, which):
        x = (field.traj.s(t) - r) / (field.delta * t)
        j = int(np.clip(round(float(x)), 1, field.depth - 1))
        nv = min(field.valid[j - 1], field.valid[j], field.valid[j + 1])
        tg = field.t_grid[:nv]
        i = int(np.clip(np.searchsorted(tg, t) - 1, 0, nv - 2))
        arr = dwp_m if which == "plus" else dwm_m
        u = (t - tg[i]) / (tg[i + 1] - tg[i])
        return (1 - u) * arr[j, i] + u * arr[j, i + 1]

    interior = np.abs(dwp_m[1: field.depth]) + np.abs(dwm_m[1: field.depth])
    scale = float(np.nanmax(interior)) if np.isfinite(interior).any() else 1.0
    scale = max(scale, 1e-30)

    transported = []
    disc = 0.0
    t_hi = field.layer_cover_time(field.depth) * 0.9
    starts = np.geomspace(field.t_grid[0] * 1.05, t_hi, n_paths)
    for t_start in starts:
        for family in ("plus", "minus"):
            td = trace_derivatives(gas, field.amb, field.traj, float(t_start))
            y = td.dr_w_plus_S if family == "plus" else td.dr_w_minus_S
            sign = -1.0 if family == "plus" else 1.0    # plus paths walk back in time
            t = float(t_start)
            r = float(field.traj.s(t)) * (1.0 - 1e-12)

            def rhs(rr, tt, yy):
                wp, wm = field.invariants_at(rr, tt)
                lm, lp = eigenvalue_arrays(gas, wp, wm)
                z = mesh_grad(rr, tt, "minus" if family == "plus" else "plus")
                quad_term = 0.25 * (g + 1.0) * yy * yy + 0.25 * (3.0 - g) * yy * z
                geom = (g - 1.0) * (wp * wp - wm * wm) / (4.0 * rr * rr)
                if family == "plus":
                    mix = (g - 1.0) * (wp * yy - wm * z) / (2.0 * rr)
                    return lp, -quad_term + geom - mix
                mix = (g - 1.0) * (wp * z - wm * yy) / (2.0 * rr)
                return lm, -quad_term - geom + mix

            lam0, _ = rhs(r, t, y)
            gap = abs(field.traj.s_prime(t) - lam0) + 1e-12
            dt = sign * min(0.1 * field.delta * t / gap, 2e-3 * t)
            samples = []
            for _ in range(100000):
                depth = (field.traj.s(t) - r) / (field.delta * t)
                if depth > field.depth - 1.5 or t + dt <= field.t_grid[0] or depth < -1e-9:
                    break
                l1, f1 = rhs(r, t, y)
                l2, f2 = rhs(r + 0.5 * dt * l1, t + 0.5 * dt, y + 0.5 * dt * f1)
                r = r + dt * l2
                t = t + dt
                y = y + dt * f2
                if abs(y) > blowup_factor * scale:
                    raise GradientBlowup(r, t, y)
                if depth >= 1.0:
                    samples.append((r, t, y))
            for rr, tt, yy in samples[:: max(1, len(samples) // 50)]:
                disc = max(disc, abs(yy - mesh_grad(rr, tt, family)) / scale)
            transported.append({
                "family": family, "t_start": float(t_start), "n_samples": len(samples),
            })
    return GradientTransport(
        dw_plus_mesh=dwp_m, dw_minus_mesh=dwm_m, grad_sup=mesh["grad_sup"],
        transported=transported, discrepancy=float(disc),
    )
