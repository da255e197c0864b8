"""Command-line surface: config parsing, subcommands, file emission, manifest.

Subcommands (each takes --config <path> --out <dir>):

    rh       jump-condition traces over a speed or time grid  -> rh_trace.csv
    selfsim  self-similar profile + diagnostics               -> profile.csv, selfsim_diagnostics.json
    solve    inverse march: field, piston, diagnostics        -> field.csv, piston.csv, march_diagnostics.json
    verify   forward FV round trip against the prescribed shock -> verify_report.json, shock_track.csv
    sweep    exponent sweeps                                  -> sweep_<probe>.json, sweep_points.csv

Exit codes: 0 success, 2 config rejection, 3 solver error, 4 verification
failure beyond tolerance. Every run leaves a manifest.json in the output
directory, written atomically even when a stage fails. Identical config and
seed produce byte-identical data files; only manifest timestamps differ.
"""

import argparse
import json
import os
import sys
import time
import traceback

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, NoAdmissibleShock, PistonShockError
from .fv import FvControls, compare_shock, simulate
from .gas import GasModel
from .march import MarchControls, PistonTrajectory, march
from .selfsimilar import integrate_profile, profile_diagnostics
from .shock import AmbientState, ShockTrajectory, solve_rh, validate_trajectory
from .sweep import PROBE_NAMES, export_reports_csv, reference_exponents, sweep
from . import kernels

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


# ---------------------------------------------------------------------------
# configuration


class RunConfig:
    """Validated run configuration; construction rejects bad fields with
    field-level messages collected into one ConfigError."""

    def __init__(self, raw):
        problems = []

        def need(cond, msg):
            if not cond:
                problems.append(msg)
            return cond

        self.raw = raw
        gamma = raw.get("gamma")
        need(isinstance(gamma, (int, float)) and 1.0 < gamma < 3.0,
             f"gamma: must be a number strictly inside (1, 3), got {gamma!r}")
        rho_inf = raw.get("rho_inf")
        need(isinstance(rho_inf, (int, float)) and rho_inf > 0,
             f"rho_inf: must be a positive number, got {rho_inf!r}")

        self.kappa1 = raw.get("kappa1", 0.5)
        self.kappa2 = raw.get("kappa2", 2.0)
        self.kappa4 = raw.get("kappa4", 1.0)
        self.varpi0 = raw.get("varpi0", 0.25)
        for name in ("kappa1", "kappa2", "kappa4", "varpi0"):
            val = getattr(self, name)
            need(isinstance(val, (int, float)) and val > 0, f"{name}: must be positive, got {val!r}")
        need(self.kappa2 > self.kappa1, "kappa2: must exceed kappa1")

        traj = raw.get("trajectory", {})
        self.head_speed = traj.get("head_speed", 1.0)
        self.head_end = traj.get("head_end", 1.0)
        need(isinstance(self.head_speed, (int, float)) and self.head_speed > 0,
             f"trajectory.head_speed: must be positive, got {self.head_speed!r}")
        need(isinstance(self.head_end, (int, float)) and self.head_end > 0,
             f"trajectory.head_end: must be positive, got {self.head_end!r}")
        self.segments = traj.get("segments", [])
        self.table_path = traj.get("table")
        if self.segments and self.table_path:
            problems.append("trajectory: give either analytic segments or a table, not both")
        for i, seg in enumerate(self.segments):
            kind = seg.get("kind")
            if kind not in ("linear", "poly_blend"):
                problems.append(f"trajectory.segments[{i}].kind: must be linear|poly_blend, got {kind!r}")
            if not isinstance(seg.get("t_end"), (int, float)):
                problems.append(f"trajectory.segments[{i}].t_end: missing or not a number")
            if kind == "poly_blend" and not isinstance(seg.get("target_speed"), (int, float)):
                problems.append(f"trajectory.segments[{i}].target_speed: missing or not a number")

        self.horizon = raw.get("horizon", 3.0 * self.head_end)
        need(isinstance(self.horizon, (int, float)) and self.horizon > self.head_end,
             f"horizon: must exceed trajectory.head_end, got {self.horizon!r}")
        self.seed = raw.get("seed", 0)
        need(isinstance(self.seed, int), f"seed: must be an integer, got {self.seed!r}")

        sol = raw.get("solver", {})
        self.selfsim_tol = sol.get("selfsim_tol", 1e-10)
        need(isinstance(self.selfsim_tol, (int, float)) and 1e-12 <= self.selfsim_tol <= 1e-4,
             f"solver.selfsim_tol: must lie in [1e-12, 1e-4], got {self.selfsim_tol!r}")
        self.march_controls = MarchControls(
            anchor_rel_step=sol.get("anchor_rel_step", 5e-3),
            speed_rel_step=sol.get("speed_rel_step", 1e-3),
            layers_per_strip=int(sol.get("layers_per_strip", 64)),
            refine=sol.get("refine", 1.0),
            piston_rel_step=sol.get("piston_rel_step", 2e-3),
            selfsim_tol=self.selfsim_tol,
        )
        cfl = sol.get("cfl", 0.4)
        need(isinstance(cfl, (int, float)) and 0 < cfl < 1, f"solver.cfl: must lie in (0, 1), got {cfl!r}")
        self.fv = FvControls(
            n_cells=int(sol.get("fv_cells", 2000)),
            cfl=cfl,
            n_frames=int(sol.get("fv_frames", 65)),
            r_max_factor=sol.get("fv_r_max_factor", 1.15),
            t_init_factor=sol.get("fv_t_init_factor", 0.5),
            tolerance_cells=sol.get("verify_tolerance_cells", 2.0),
        )
        need(self.fv.n_cells >= 16, "solver.fv_cells: must be at least 16")
        self.enforce_a3 = bool(sol.get("enforce_a3", False))

        self.rh_grid = raw.get("rh", {})
        self.selfsim_s0 = raw.get("selfsim", {}).get("s0", self.head_speed)
        need(isinstance(self.selfsim_s0, (int, float)) and self.selfsim_s0 > 0,
             f"selfsim.s0: must be positive, got {self.selfsim_s0!r}")

        sw = raw.get("sweep", {})
        self.sweep_probes = sw.get("probes", ["rho_s", "c_s", "s_prime_minus_v_s"])
        for p in self.sweep_probes:
            if p not in PROBE_NAMES:
                problems.append(f"sweep.probes: unknown probe {p!r} (choose from {PROBE_NAMES})")
        self.sweep_grid = sw.get("rho_grid", [10.0 ** (-4 - 0.5 * i) for i in range(9)])
        if not (isinstance(self.sweep_grid, list) and len(self.sweep_grid) >= 2):
            problems.append("sweep.rho_grid: need at least two points (fit impossible otherwise)")
        else:
            if any(b >= a for a, b in zip(self.sweep_grid, self.sweep_grid[1:])):
                problems.append("sweep.rho_grid: must be strictly decreasing")
        self.sweep_s0 = sw.get("s0", self.head_speed)

        self.verify_piston_csv = raw.get("verify", {}).get("piston_csv")

        if problems:
            raise ConfigError(problems)
        self.gamma = float(gamma)
        self.rho_inf = float(rho_inf)

    def gas(self):
        return GasModel(self.gamma)

    def ambient(self):
        return AmbientState(self.rho_inf)

    def trajectory(self):
        kw = dict(kappa1=self.kappa1, kappa2=self.kappa2,
                  kappa4=self.kappa4, varpi0=self.varpi0)
        if self.table_path:
            t, s = _read_table_csv(self.table_path)
            return ShockTrajectory.from_table(t, s, self.head_speed, self.head_end, **kw)
        if self.segments:
            return ShockTrajectory.from_segments(self.head_speed, self.head_end,
                                                 self.segments, **kw)
        return ShockTrajectory.constant(self.head_speed, self.head_end, **kw)


def _read_table_csv(path):
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:2] != ["t", "s"]:
            raise ConfigError(f"trajectory table {path}: header must be 't,s'")
        for line in f:
            line = line.strip()
            if line:
                parts = line.split(",")
                rows.append((float(parts[0]), float(parts[1])))
    if len(rows) < 4:
        raise ConfigError(f"trajectory table {path}: need at least 4 rows")
    t = np.array([r[0] for r in rows])
    s = np.array([r[1] for r in rows])
    if np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ConfigError(f"trajectory table {path}: t must be strictly increasing and positive")
    return t, s


def load_config(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return RunConfig(raw)


# ---------------------------------------------------------------------------
# manifest


class Manifest:
    def __init__(self, command, config_raw, out_dir):
        self.data = {
            "command": command,
            "config": config_raw,
            "versions": {
                "pistonshock": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "kernel_backend": kernels.BACKEND,
            },
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "finished": None,
            "stages": [],
            "outputs": [],
            "diagnostics": {},
            "exit_code": None,
        }
        self.out_dir = out_dir

    def stage(self, name, status, error=None):
        entry = {"name": name, "status": status}
        if error is not None:
            entry["error_class"] = type(error).__name__
            entry["message"] = str(error)
        self.data["stages"].append(entry)

    def output(self, path):
        self.data["outputs"].append(os.path.basename(path))

    def finish(self, exit_code):
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.data["exit_code"] = exit_code
        path = os.path.join(self.out_dir, "manifest.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(self.data, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        os.replace(tmp, path)


def _write_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# commands


def cmd_rh(cfg, out_dir, manifest):
    gas = cfg.gas()
    amb = cfg.ambient()
    grid = cfg.rh_grid
    if "t" in grid:
        traj = cfg.trajectory()
        ts = [float(x) for x in grid["t"]]
        points = [(t, float(traj.s_prime(t))) for t in ts]
    else:
        points = [(float("nan"), float(x)) for x in grid.get("s_prime", [])]
    path = os.path.join(out_dir, "rh_trace.csv")
    with open(path, "w") as f:
        f.write("t,s_prime,k,rho_s,v_s,c_s,lambda_plus_s,lambda_minus_s,w_plus_s,w_minus_s,flag\n")
        for t, sp in points:
            try:
                tr = solve_rh(gas, amb, sp, t=t)
                f.write(
                    f"{t!r},{sp!r},{tr.k!r},{tr.rho_s!r},{tr.v_s!r},{tr.c_s!r},"
                    f"{tr.lambda_plus_s!r},{tr.lambda_minus_s!r},"
                    f"{tr.w_plus_s!r},{tr.w_minus_s!r},OK\n"
                )
            except NoAdmissibleShock:
                f.write(f"{t!r},{sp!r},,,,,,,,,NO_SHOCK\n")
    manifest.output(path)
    manifest.stage("rh", "ok")
    return EXIT_OK


def cmd_selfsim(cfg, out_dir, manifest):
    gas = cfg.gas()
    amb = cfg.ambient()
    profile = integrate_profile(gas, amb, cfg.selfsim_s0, tol=cfg.selfsim_tol)
    csv_path = os.path.join(out_dir, "profile.csv")
    profile.export_csv(csv_path)
    manifest.output(csv_path)
    diag = profile_diagnostics(profile, amb)
    payload = diag.to_dict()
    payload["mass_residual"] = profile.mass_residual()
    payload["b0"] = profile.b0
    payload["s0"] = profile.s0
    payload["free_boundary_residual"] = abs(
        float(profile.theta_of_sigma[-1]) - profile.b0
    )
    jpath = os.path.join(out_dir, "selfsim_diagnostics.json")
    _write_json(jpath, payload)
    manifest.output(jpath)
    manifest.data["diagnostics"]["selfsim"] = payload
    manifest.stage("selfsim", "ok")
    return EXIT_OK


def cmd_solve(cfg, out_dir, manifest):
    gas = cfg.gas()
    amb = cfg.ambient()
    traj = cfg.trajectory()
    report = validate_trajectory(traj, amb, horizon=cfg.horizon)
    manifest.data["diagnostics"]["trajectory_validation"] = {
        "a1_pass": report.a1_pass, "a2_pass": report.a2_pass, "a3_pass": report.a3_pass,
        "a3_sup": report.a3_sup, "a3_bound": report.a3_bound,
        "violations": report.violations,
    }
    if not (report.a1_pass and report.a2_pass):
        raise ConfigError(["trajectory rejected: " + "; ".join(report.violations)])
    if not report.a3_pass:
        if cfg.enforce_a3:
            raise ConfigError(["trajectory rejected ((A3) enforced): " + "; ".join(report.violations)])
        manifest.stage("validate_a3", "warn")

    fld, piston, diag = march(gas, amb, traj, cfg.horizon, cfg.march_controls)
    fpath = os.path.join(out_dir, "field.csv")
    fld.export_csv(fpath)
    manifest.output(fpath)
    ppath = os.path.join(out_dir, "piston.csv")
    piston.export_csv(ppath)
    manifest.output(ppath)
    dpath = os.path.join(out_dir, "march_diagnostics.json")
    _write_json(dpath, diag.to_dict())
    manifest.output(dpath)
    manifest.data["diagnostics"]["march"] = diag.to_dict()
    manifest.stage("solve", "ok")
    return EXIT_OK


def _load_piston_csv(path, cfg, gas, amb):
    ts, bs, bps = [], [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "t,b,b_prime":
            raise ConfigError(f"piston CSV {path}: unexpected header {header!r}")
        for line in f:
            line = line.strip()
            if line:
                a, b, c = line.split(",")
                ts.append(float(a))
                bs.append(float(b))
                bps.append(float(c))
    if not ts:
        raise ConfigError(f"piston CSV {path}: empty")
    profile = integrate_profile(gas, amb, cfg.head_speed, tol=cfg.selfsim_tol)
    return PistonTrajectory(ts, bs, bps, profile.b0, cfg.head_end, head_profile=profile)


def cmd_verify(cfg, out_dir, manifest):
    gas = cfg.gas()
    amb = cfg.ambient()
    traj = cfg.trajectory()
    piston_path = cfg.verify_piston_csv or os.path.join(out_dir, "piston.csv")
    if not os.path.exists(piston_path):
        raise ConfigError([f"piston CSV not found: {piston_path} (run solve first)"])
    piston = _load_piston_csv(piston_path, cfg, gas, amb)
    t_init = cfg.fv.t_init_factor * cfg.head_end
    t_end = min(cfg.horizon, float(piston.t[-1]))
    r_max = cfg.fv.r_max_factor * float(traj.s(t_end))
    run = simulate(gas, amb, piston, r_max, t_init, t_end,
                   cfl=cfg.fv.cfl, n_cells=cfg.fv.n_cells, n_frames=cfg.fv.n_frames)
    spath = os.path.join(out_dir, "shock_track.csv")
    run.locator.export_csv(spath)
    manifest.output(spath)
    comparison = compare_shock(run.locator, traj, t_min=2.0 * t_init)
    payload = comparison.to_dict()
    payload["tolerance_cells"] = cfg.fv.tolerance_cells
    payload["n_cells"] = cfg.fv.n_cells
    payload["ledger_defect"] = run.ledger_defect
    payload["radial_mass_defect"] = run.radial_mass_defect
    payload["kernel_backend"] = run.backend
    vpath = os.path.join(out_dir, "verify_report.json")
    _write_json(vpath, payload)
    manifest.output(vpath)
    manifest.data["diagnostics"]["verify"] = payload
    if comparison.sup_cells > cfg.fv.tolerance_cells:
        manifest.stage("verify", "fail")
        return EXIT_VERIFY
    manifest.stage("verify", "ok")
    return EXIT_OK


def cmd_sweep(cfg, out_dir, manifest):
    gas = cfg.gas()
    refs = reference_exponents(gas)
    grid = [float(r) for r in cfg.sweep_grid]
    # truncate the grid at the admissibility boundary, with a warning
    admissible = [r for r in grid if cfg.sweep_s0**2 * r ** (1.0 - cfg.gamma) > cfg.gamma]
    if len(admissible) < len(grid):
        manifest.stage("sweep_grid_truncated", "warn",
                       error=PistonShockError(
                           f"{len(grid) - len(admissible)} grid points beyond admissibility dropped"))
    if len(admissible) < 2:
        raise ConfigError(["sweep.rho_grid: fewer than two admissible points remain"])
    reports = []
    needs_traj = [p for p in cfg.sweep_probes if p in ("char_time_ratio", "grad_sup")]
    traj = cfg.trajectory() if needs_traj else None
    for probe in cfg.sweep_probes:
        target = traj if probe in ("char_time_ratio", "grad_sup") else cfg.sweep_s0
        rep = sweep(probe, gas, target, admissible, horizon=cfg.horizon,
                    varpi0=cfg.varpi0)
        reports.append(rep)
        jpath = os.path.join(out_dir, f"sweep_{probe}.json")
        payload = rep.to_dict()
        payload["alpha_ref_table"] = refs.get(probe)
        _write_json(jpath, payload)
        manifest.output(jpath)
    cpath = os.path.join(out_dir, "sweep_points.csv")
    export_reports_csv(reports, cpath)
    manifest.output(cpath)
    manifest.data["diagnostics"]["sweep"] = {
        r.quantity: {"alpha_hat": r.alpha_hat, "alpha_ref": r.alpha_ref,
                     "passed": r.passed, "n_failures": len(r.failures)}
        for r in reports
    }
    manifest.stage("sweep", "ok")
    return EXIT_OK


COMMANDS = {
    "rh": cmd_rh,
    "selfsim": cmd_selfsim,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pistonshock",
        description="Inverse piston problem: reconstruct the piston from a prescribed shock",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        manifest = Manifest(args.command, {"config_path": args.config}, args.out)
        manifest.stage("config", "rejected", error=exc)
        manifest.finish(EXIT_CONFIG)
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    manifest = Manifest(args.command, cfg.raw, args.out)
    manifest.stage("config", "ok")
    try:
        code = COMMANDS[args.command](cfg, args.out, manifest)
    except ConfigError as exc:
        manifest.stage(args.command, "rejected", error=exc)
        code = EXIT_CONFIG
        print(str(exc), file=sys.stderr)
    except PistonShockError as exc:
        manifest.stage(args.command, "failed", error=exc)
        code = EXIT_SOLVER
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    except Exception as exc:      # pragma: no cover - unexpected bug surface
        manifest.stage(args.command, "crashed", error=exc)
        code = EXIT_SOLVER
        traceback.print_exc()
    manifest.finish(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
