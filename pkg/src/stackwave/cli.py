"""Command-line runner: flat ``key = value`` configs, scenario dispatch and
CSV / JSON outputs.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import ConfigError, ContractError, DomainError, InstabilityError, NonConvergence, StackwaveError
from .follower import FollowerProblem, best_response, grad_J2_w2, nash_gap_check, eval_J2
from .geometry import (
    MovingDomain,
    build_partition,
    pullback_initial,
    speed_refusal_message,
    validate_controllability_params,
)
from .spaces import GridSpec, norm
from .wavesolver import (
    ControlTrace,
    backward_batch,
    boundary_flux,
    forward_batch,
    solve_forward,
    terminal_state,
)

MODES = ("simulate", "nash", "leader", "verify", "sweep", "oracle-regen")

# key -> (type, default); a default of ``None`` means optional without value
KEYS = {
    "k": (float, None),
    "T": (float, None),
    "partition.mode": (str, "overlap"),
    "partition.split_time": (float, None),
    "grid.ny": (int, 100),
    "grid.cfl": (float, 0.8),
    "follower.sigma": (float, 1.0),
    "follower.tol": (float, 1e-10),
    "follower.max_iter": (int, 500),
    "target.v2": (str, "zero"),
    "target.v0": (str, "reachable"),
    "target.v1": (str, "reachable"),
    "leader.rho0": (float, None),
    "leader.rho1": (float, None),
    "leader.delta": (float, 0.0),
    "leader.tol": (float, 1e-9),
    "leader.max_iter": (int, 20000),
    "leader.theta": (float, 1.0),
    "leader.coupling": (str, "cg"),
    "leader.operator": (str, "assembled"),
    "leader.slack": (float, 0.02),
    "leader.override_speed_check": (bool, False),
    "control.w1": (str, "zero"),
    "control.w2": (str, "zero"),
    "init.u0": (str, "zero"),
    "init.u1": (str, "zero"),
    "probe.y": (float, None),
    "probe.t": (float, None),
    "sweep.mode": (str, "nash"),
    "run.mode": (str, None),
    "run.seed": (int, 0),
    "output.dir": (str, "out"),
}

REQUIRED = {
    "simulate": ("k", "T"),
    "nash": ("k", "T"),
    "leader": ("k", "T", "leader.rho0", "leader.rho1"),
    "verify": (),
    "sweep": ("k", "T"),
    "oracle-regen": (),
}


# ----------------------------------------------------------------------
# config


def _convert(key, raw):
    typ = KEYS[key][0]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {typ.__name__})", key=key) from None


def parse_config_text(text, allow_lists=False):
    """Parse ``key = value`` lines (``#`` starts a comment).  With
    ``allow_lists`` comma-separated values become lists."""
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})", key=key)
        if key in cfg:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})", key=key)
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) > 1:
            if not allow_lists:
                raise ConfigError(f"{key}: list values are only allowed in sweep mode", key=key)
            cfg[key] = [_convert(key, p) for p in parts]
        else:
            cfg[key] = _convert(key, raw)
    return cfg


def load_config(path, allow_lists=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if allow_lists is None:
        allow_lists = True
    return parse_config_text(text, allow_lists)


def resolve(cfg, mode):
    """Fill defaults and check required keys (all missing ones at once)."""
    if mode not in REQUIRED:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}", key="run.mode")
    missing = [k for k in REQUIRED[mode] if k not in cfg]
    if missing:
        raise ConfigError(f"missing required keys for {mode}: {', '.join(missing)}", key=missing[0])
    out = {k: v for k, (_, v) in KEYS.items()}
    out.update(cfg)
    out["run.mode"] = mode
    if mode != "sweep":
        for k, v in out.items():
            if isinstance(v, list):
                raise ConfigError(f"{k}: list values are only allowed in sweep mode", key=k)
    return out


# ----------------------------------------------------------------------
# presets


def _read_csv_array(path, key):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot read CSV {path}: {exc}", key=key) from None
    return arr


def _preset_name(spec):
    name, _, arg = spec.partition(":")
    return name.strip().lower(), arg.strip()


def _preset_int(arg, key, default=1):
    if not arg:
        return default
    try:
        return int(arg)
    except ValueError:
        raise ConfigError(f"{key}: bad preset argument {arg!r}", key=key) from None


def space_profile(spec, y, key):
    """zero | one | sine:m | bump | CSV path -> values on ``y``."""
    name, arg = _preset_name(spec)
    if name == "zero":
        return np.zeros_like(y)
    if name == "one":
        return np.ones_like(y)
    if name == "sine":
        return np.sin(_preset_int(arg, key) * np.pi * y)
    if name == "bump":
        s = 4.0 * (y - 0.5)
        return np.where(np.abs(s) < 1, (1 - s * s) ** 2, 0.0)
    if spec.endswith(".csv"):
        arr = _read_csv_array(spec, key).ravel()
        if arr.size != y.size:
            raise ConfigError(f"{key}: CSV has {arr.size} values, expected {y.size}", key=key)
        return arr
    raise ConfigError(f"{key}: unknown preset {spec!r}", key=key)


def time_profile(spec, t, T, key):
    """zero | one | sine:m (sin(m pi t)) | bump (sin^2(pi t/T)) | CSV."""
    name, arg = _preset_name(spec)
    if name == "zero":
        return np.zeros_like(t)
    if name == "one":
        return np.ones_like(t)
    if name == "sine":
        return np.sin(_preset_int(arg, key) * np.pi * t)
    if name == "bump":
        m = _preset_int(arg, key, 0)
        return np.sin(np.pi * t / T) ** 2 * np.cos(m * t)
    if spec.endswith(".csv"):
        arr = _read_csv_array(spec, key).ravel()
        if arr.size != t.size:
            raise ConfigError(f"{key}: CSV has {arr.size} values, expected {t.size}", key=key)
        return arr
    raise ConfigError(f"{key}: unknown preset {spec!r}", key=key)


def field_profile(spec, grid, key):
    if spec.endswith(".csv"):
        arr = _read_csv_array(spec, key)
        if arr.shape == grid.shape:
            return arr
        flat = arr.ravel()
        if flat.size == grid.ny + 1:
            return np.broadcast_to(flat, grid.shape).copy()
        raise ConfigError(f"{key}: CSV shape {arr.shape} fits neither {grid.shape} nor ({grid.ny + 1},)", key=key)
    return np.broadcast_to(space_profile(spec, grid.y, key), grid.shape).copy()


# ----------------------------------------------------------------------
# builders


def build_setup(cfg):
    domain = MovingDomain(cfg["k"], cfg["T"])
    grid = GridSpec.from_cfl(cfg["grid.ny"], cfg["T"], cfg["grid.cfl"])
    part = build_partition(cfg["partition.mode"], cfg["T"], cfg["partition.split_time"], grid=grid)
    return domain, grid, part


def build_follower(cfg):
    domain, grid, part = build_setup(cfg)
    u0 = space_profile(cfg["init.u0"], grid.y, "init.u0")
    u1 = space_profile(cfg["init.u1"], grid.y, "init.u1")
    init = None
    if np.any(u0) or np.any(u1):
        init = pullback_initial(u0, u1, domain)
    v2 = field_profile(cfg["target.v2"], grid, "target.v2")
    return FollowerProblem(grid, domain, part, cfg["follower.sigma"], v2, init,
                           cfg["follower.tol"], cfg["follower.max_iter"])


def leader_trace(cfg, fol):
    t = fol.grid.t
    return fol.partition.sigma1 * time_profile(cfg["control.w1"], t, fol.grid.T, "control.w1")


def build_leader(cfg, fol=None):
    from .leader import LeaderProblem

    fol = fol or build_follower(cfg)
    grid = fol.grid
    targets = {}
    needs_reach = any(cfg[k].strip().lower() == "reachable" for k in ("target.v0", "target.v1"))
    if needs_reach:
        w1 = leader_trace(cfg, fol)
        if not np.any(w1):
            w1 = fol.partition.sigma1 * time_profile("bump:3", grid.t, grid.T, "control.w1")
        ts = terminal_state(best_response(fol.replace(tol=min(fol.tol, 1e-12)), w1).v)
        targets["target.v0"] = np.concatenate([[0.0], ts.vT, [0.0]])
        targets["target.v1"] = np.concatenate([[0.0], ts.vTprime, [0.0]])
    vals = {}
    for key in ("target.v0", "target.v1"):
        spec = cfg[key]
        vals[key] = targets[key] if spec.strip().lower() == "reachable" else space_profile(spec, grid.y, key)
    return LeaderProblem(
        fol, vals["target.v0"], vals["target.v1"], cfg["leader.rho0"], cfg["leader.rho1"],
        cfg["leader.delta"], cfg["leader.coupling"], cfg["leader.theta"],
        override_speed_check=cfg["leader.override_speed_check"],
    )


# ----------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_trace(path, t, trace, name):
    write_csv(path, ["t", name, "active"], zip(t, trace.values, trace.mask.astype(int)))


def write_terminal(path, y, ts):
    pad = lambda a: np.concatenate([[0.0], a, [0.0]])  # noqa: E731
    write_csv(path, ["y", "vT", "vTprime"], zip(y, pad(ts.vT), pad(ts.vTprime)))


def write_field(path, field):
    g = field.grid
    write_csv(path, ["t"] + [f"y={_fmt(y)}" for y in g.y],
              ([t] + list(row) for t, row in zip(g.t, field.values)))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _probe(field, y, t):
    """Bilinear interpolation of a grid field."""
    g = field.grid
    if not (0 <= y <= 1 and 0 <= t <= g.T):
        raise ConfigError(f"probe point ({y}, {t}) outside the domain", key="probe.y")
    col = np.array([np.interp(t, g.t, field.values[:, j]) for j in range(g.ny + 1)])
    return float(np.interp(y, g.y, col))


# ----------------------------------------------------------------------
# modes


def run_simulate(cfg, out):
    fol = build_follower(cfg)
    grid, dom = fol.grid, fol.domain
    w = time_profile(cfg["control.w1"], grid.t, grid.T, "control.w1") + \
        time_profile(cfg["control.w2"], grid.t, grid.T, "control.w2")
    v = solve_forward(grid, dom, boundary=w, init=fol.init)
    summary = {"ny": grid.ny, "nt": grid.nt, "dt": grid.dt}
    if out:
        write_field(os.path.join(out, "field.csv"), v)
        write_terminal(os.path.join(out, "terminal.csv"), grid.y, terminal_state(v))
        write_trace(os.path.join(out, "w1.csv"), grid.t, ControlTrace(w), "w")
    if cfg["probe.y"] is not None or cfg["probe.t"] is not None:
        py = cfg["probe.y"] if cfg["probe.y"] is not None else 0.0
        pt = cfg["probe.t"] if cfg["probe.t"] is not None else grid.T
        summary.update({"probe_y": py, "probe_t": pt, "probe_value": _probe(v, py, pt)})
    ts = terminal_state(v)
    summary["terminal_l2"] = norm(fol.metric, "L2", ts.vT)
    summary["terminal_hm1_velocity"] = norm(fol.metric, "Hm1", ts.vTprime)
    return summary


def run_nash(cfg, out):
    fol = build_follower(cfg)
    grid = fol.grid
    w1 = ControlTrace.masked(leader_trace(cfg, fol), fol.partition.sigma1)
    res = best_response(fol, w1)
    flux = boundary_flux(res.p, fol.domain).values
    m2 = fol.partition.sigma2
    sw2 = fol.sigma * res.w2.values
    stat = float(np.sqrt(np.sum(fol.w2_weights * (sw2 - flux) ** 2)))
    scale = float(np.sqrt(np.sum(fol.w2_weights * sw2**2)))
    gap = nash_gap_check(fol, w1, res.w2, trials=10, magnitude=0.1, rng=cfg["run.seed"])
    summary = {
        "iterations": res.stats["iterations"],
        "grad_norm": res.stats["grad_norm"],
        "J2": res.stats["J2"],
        "w1_norm": w1.norm(grid),
        "w2_norm": res.w2.norm(grid),
        "stationarity": stat / scale if scale > 0 else stat,
        "nash_min_gap": gap.min_gap,
        "sigma2_nodes": int(m2.sum()),
    }
    if out:
        write_trace(os.path.join(out, "w1.csv"), grid.t, w1, "w1")
        write_trace(os.path.join(out, "w2.csv"), grid.t, res.w2, "w2")
        write_terminal(os.path.join(out, "terminal.csv"), grid.y, terminal_state(res.v))
        write_csv(os.path.join(out, "iters.csv"), ["iter", "residual"], enumerate(res.stats["history"]))
    return summary


def run_leader(cfg, out):
    from .leader import DualOptions, controllability_residual, minimize_dual, recover_leader, vi_residual

    lp = build_leader(cfg)
    rep = validate_controllability_params(lp.domain)
    if not rep.speed_ok and not lp.override_speed_check:
        raise ConfigError(speed_refusal_message(lp.domain), key="k")
    opts = DualOptions(tol=cfg["leader.tol"], max_iter=cfg["leader.max_iter"],
                       operator=cfg["leader.operator"], seed=cfg["run.seed"])
    fstar, log = minimize_dual(lp, opts)
    sol = recover_leader(lp, fstar)
    d0, d1, inside = controllability_residual(lp, sol.terminal, cfg["leader.slack"])
    vi = vi_residual(lp, fstar, directions=20, rng=cfg["run.seed"], terminal=sol.terminal)
    grid = lp.grid
    obj = np.array(log.objective)
    summary = {
        "iterations": log.iterations,
        "restarts": len(log.restarts),
        "lipschitz": log.lipschitz,
        "dual_objective": float(obj[-1]),
        "objective_monotone": bool(np.all(np.diff(obj) <= 1e-12 * np.maximum(1.0, np.abs(obj[:-1])))),
        "prox_residual": log.residual[-1],
        "J": sol.J,
        "J2": sol.nash_stats["J2"],
        "w1_norm": sol.w1.norm(grid),
        "w2_norm": sol.w2.norm(grid),
        "d0": d0,
        "d1": d1,
        "inside": inside,
        "vi_residual": vi.residual,
        "vi_min": vi.min_value,
        "speed_ok": rep.speed_ok,
        "horizon_warning": rep.horizon_warning,
    }
    if out:
        write_trace(os.path.join(out, "w1.csv"), grid.t, sol.w1, "w1")
        write_trace(os.path.join(out, "w2.csv"), grid.t, sol.w2, "w2")
        write_terminal(os.path.join(out, "terminal.csv"), grid.y, sol.terminal)
        write_csv(os.path.join(out, "iters.csv"), ["iter", "objective", "residual", "restart"],
                  ((r["iter"], r["objective"], r["residual"], r["restart"]) for r in log.as_rows()))
        pad = lambda a: np.concatenate([[0.0], a, [0.0]])  # noqa: E731
        write_csv(os.path.join(out, "targets.csv"), ["y", "v0", "v1"],
                  zip(grid.y, pad(lp.v0_target), pad(lp.v1_target)))
    return summary


# ----------------------------------------------------------------------
# verification suite


def _verify_defaults(cfg):
    base = {k: v for k, (_, v) in KEYS.items()}
    base.update({"k": 0.2, "T": 4.0, "leader.rho0": 0.05, "leader.rho1": 0.05, "follower.tol": 1e-10})
    base.update({k: v for k, v in cfg.items() if v is not None})
    return base


def _check(name, passed, **measured):
    return {"name": name, "passed": bool(passed), **measured}


def verify_suite(config=None, fault=None):
    """Run the invariant checks and return ``{"checks": [...], "passed": bool}``.

    ``fault="flux_sign"`` flips the sign of the boundary flux inside ``A*``
    (test hook for the adjointness check).
    """
    from .leader import (
        DualOptions, DualPoint, apply_A, apply_Astar, controllability_residual,
        minimize_dual, recover_leader, vi_residual,
    )
    from .oracle import dalembert_reference, fd_gradient

    cfg = _verify_defaults(config or {})
    rng = np.random.default_rng(cfg["run.seed"])
    checks = []

    # transpose duality of the forward sweep
    grid = GridSpec.from_cfl(cfg["grid.ny"], 1.0, cfg["grid.cfl"])
    dom = MovingDomain(cfg["k"], 1.0)
    errs = []
    for _ in range(5):
        b = rng.standard_normal((grid.nt + 1, 1))
        f = rng.standard_normal(grid.shape + (1,))
        G = rng.standard_normal(grid.shape + (1,))
        V = forward_batch(grid, dom, b, f)
        Vbar, _, _, fbar = backward_batch(grid, dom, G)
        lhs = float(np.sum(G * V))
        rhs = float(np.sum(Vbar[:, 0] * b) + np.sum(fbar * f))
        errs.append(abs(lhs - rhs) / max(abs(lhs), 1e-300))
    checks.append(_check("transpose_duality", max(errs) <= 1e-11, max_rel_error=max(errs), tol=1e-11))

    # adjointness of A and A*
    fol = build_follower(cfg)
    lp = build_leader(cfg, fol)
    g = fol.grid
    m = lp.metric
    worst = 0.0
    for _ in range(10):
        w = fol.partition.sigma1 * rng.standard_normal(g.nt + 1)
        fp = DualPoint.from_interior(rng.standard_normal(g.ny - 1), rng.standard_normal(g.ny - 1))
        a0, a1 = apply_A(lp, w)
        lhs = float(a0 @ (m.mass @ fp.f0[1:-1]) + a1 @ (m.mass @ fp.f1[1:-1]))
        ast = apply_Astar(lp, fp).values
        if fault == "flux_sign":
            ast = -ast
        rhs = float(np.sum(fol.w1_weights * w * ast))
        wn = float(np.sqrt(np.sum(fol.w1_weights * w * w)))
        fn = math.sqrt(norm(m, "H10", fp.f0) ** 2 + norm(m, "L2", fp.f1) ** 2)
        worst = max(worst, abs(lhs - rhs) / (1 + wn * fn))
    checks.append(_check("adjointness", worst <= 1e-8, max_scaled_error=worst, tol=1e-8))

    # Nash stationarity and finite-difference gradient
    yy, tt = np.meshgrid(g.y, g.t)
    c = rng.uniform(-1, 1, 3)
    v2 = c[0] * np.sin(np.pi * yy) * np.cos(tt) + c[1] * yy * (1 - yy) + c[2] * np.sin(2 * np.pi * yy) * np.sin(tt)
    fol2 = fol.replace(v2_target=v2)
    w1 = ControlTrace.masked(np.sin(np.pi * g.t / g.T) ** 2, fol.partition.sigma1)
    res = best_response(fol2, w1)
    flux = boundary_flux(res.p, fol2.domain).values
    sw2 = fol2.sigma * res.w2.values
    wts = fol2.w2_weights
    stat = float(np.sqrt(np.sum(wts * (sw2 - flux) ** 2)) / np.sqrt(np.sum(wts * sw2**2)))
    checks.append(_check("nash_stationarity", stat <= 1e-6, relative_residual=stat, tol=1e-6))
    wb = ControlTrace.masked(rng.standard_normal(g.nt + 1), fol2.partition.sigma2)
    gr = grad_J2_w2(fol2, w1, wb).values
    fd_err = 0.0
    for _ in range(5):
        d = fol2.partition.sigma2 * rng.standard_normal(g.nt + 1)
        fd = fd_gradient(lambda s: eval_J2(fol2, w1, wb.values + s[0] * d), np.zeros(1), 1e-4)[0]
        an = float(np.sum(wts * gr * d))
        fd_err = max(fd_err, abs(fd - an) / max(abs(an), 1e-300))
    checks.append(_check("gradient_fd", fd_err <= 1e-5, max_rel_error=fd_err, tol=1e-5))

    # Nash gap sampling
    gaps = [nash_gap_check(fol2, w1, res.w2, trials=20, magnitude=mag, rng=rng).min_gap for mag in (0.01, 0.1)]
    checks.append(_check("nash_gap", min(gaps) >= -1e-10, min_gap=min(gaps), tol=-1e-10))

    # leader VI certificate on the configured (default reachable) target
    try:
        fstar, log = minimize_dual(lp, DualOptions(tol=cfg["leader.tol"], max_iter=cfg["leader.max_iter"],
                                                   operator=cfg["leader.operator"], seed=cfg["run.seed"]))
        sol = recover_leader(lp, fstar)
        vi = vi_residual(lp, fstar, directions=20, rng=rng, terminal=sol.terminal)
        d0, d1, inside = controllability_residual(lp, sol.terminal, cfg["leader.slack"])
        obj = np.array(log.objective)
        mono = bool(np.all(np.diff(obj) <= 1e-12 * np.maximum(1.0, np.abs(obj[:-1]))))
        checks.append(_check("vi_certificate", vi.residual <= 1e-6 and inside and mono,
                             vi_residual=vi.residual, d0=d0, d1=d1, inside=inside,
                             monotone=mono, iterations=log.iterations, tol=1e-6))
    except (NonConvergence, ConfigError) as exc:
        checks.append(_check("vi_certificate", False, error=str(exc)))

    # convergence order on the cylinder against the image series
    T = 0.75
    wfun = lambda s: np.sin(np.pi * s) ** 3  # noqa: E731
    errs = []
    for ny in (50, 100, 200):
        gg = GridSpec.from_cfl(ny, T, cfg["grid.cfl"])
        v = solve_forward(gg, MovingDomain(0.0, T), boundary=wfun(gg.t))
        Y, Tm = np.meshgrid(gg.y, gg.t)
        errs.append(float(np.max(np.abs(v.values - dalembert_reference(wfun, Y, Tm)))))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    ok = all(1.7 <= o <= 2.3 for o in orders)
    checks.append(_check("convergence_order", ok, errors=errs, orders=orders, band=[1.7, 2.3]))

    return {"checks": checks, "passed": all(c["passed"] for c in checks), "seed": cfg["run.seed"]}


def run_verify(cfg, out):
    report = verify_suite({k: v for k, v in cfg.items() if k in KEYS})
    if out:
        write_json(os.path.join(out, "verify.json"), report)
    summary = {c["name"]: c["passed"] for c in report["checks"]}
    summary["all_passed"] = report["passed"]
    return summary


# ----------------------------------------------------------------------
# sweeps


def _single(mode, cfg):
    t0 = time.perf_counter()
    try:
        summary = RUNNERS[mode](cfg, None)
        status, err = "ok", ""
    except StackwaveError as exc:
        summary, status, err = {}, type(exc).__name__, str(exc)
    return summary, status, err, time.perf_counter() - t0


def _sweep_row(args):
    mode, cfg = args
    summary, status, err, _ = _single(mode, cfg)
    return summary, status, err


def run_sweep(cfg, out, jobs=1):
    mode = cfg["sweep.mode"]
    if mode not in ("simulate", "nash", "leader"):
        raise ConfigError(f"sweep.mode={mode!r} must be simulate, nash or leader", key="sweep.mode")
    axes = sorted(k for k, v in cfg.items() if isinstance(v, list))
    values = [cfg[k] for k in axes]
    combos = list(itertools.product(*values)) if axes else [()]
    tasks = []
    for combo in combos:
        c = dict(cfg)
        c.update(zip(axes, combo))
        c = resolve({k: v for k, v in c.items() if k in KEYS and v is not None and k != "run.mode"}, mode)
        tasks.append((mode, c))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_row, tasks))
    else:
        results = [_sweep_row(t) for t in tasks]
    fields = sorted({k for s, _, _ in results for k in s})
    rows = []
    for combo, (s, status, err) in zip(combos, results):
        rows.append(list(combo) + [status, err] + [s.get(f) for f in fields])
    if out:
        write_csv(os.path.join(out, "sweep.csv"), axes + ["status", "error"] + fields, rows)
    return {"runs": len(rows), "failed": sum(1 for r in results if r[1] != "ok"), "axes": axes,
            "rows": [dict(zip(axes + ["status", "error"] + fields, r)) for r in rows]}


RUNNERS = {"simulate": run_simulate, "nash": run_nash, "leader": run_leader, "verify": run_verify}


# ----------------------------------------------------------------------
# entry points


def run_config(path, mode=None, out=None, seed=None, jobs=1):
    """Load, validate and execute a config; returns the summary dict and
    writes ``summary.json`` plus mode-specific CSVs into the output dir."""
    raw = load_config(path)
    if mode is None:
        mode = raw.get("run.mode")
        if mode is None:
            raise ConfigError("no mode given (run.mode missing)", key="run.mode")
    elif raw.get("run.mode", mode) != mode:
        raise ConfigError(f"run.mode={raw['run.mode']!r} conflicts with subcommand {mode!r}", key="run.mode")
    if seed is not None:
        raw["run.seed"] = int(seed)
    cfg = resolve(raw, mode)
    if out is not None:
        cfg["output.dir"] = out
    out = cfg["output.dir"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    if mode == "sweep":
        result = run_sweep(cfg, out, jobs)
        body = {k: v for k, v in result.items() if k != "rows"}
    else:
        body = RUNNERS[mode](cfg, out)
    params = {k: v for k, v in cfg.items() if v is not None}
    summary = {"mode": mode, "parameters": params, "results": body,
               "rng": {"generator": "numpy.random.default_rng", "seed": cfg["run.seed"]},
               "wall_time": time.perf_counter() - t0}
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


def regen_golden(out=None, confirm=False):
    from .oracle import GOLDEN_VERSION, write_golden

    if not confirm:
        raise ConfigError("oracle regen rewrites the golden files; pass --confirm")
    out = out or os.path.join("tests", "data", "golden", GOLDEN_VERSION)
    return write_golden(out)


def build_parser():
    p = argparse.ArgumentParser(prog="stackwave", description="Hierarchical boundary control of a string on a moving interval.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "nash", "leader", "verify", "sweep", "run"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name not in ("verify",))
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--jobs", type=int, default=1)
    o = sub.add_parser("oracle")
    o.add_argument("action", choices=["regen"])
    o.add_argument("--confirm", action="store_true")
    o.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            paths = regen_golden(args.out, args.confirm)
            print(f"wrote {len(paths)} golden files")
            return 0
        if args.command == "verify" and args.config is None:
            out = args.out or "out"
            os.makedirs(out, exist_ok=True)
            report = verify_suite({"run.seed": args.seed or 0})
            write_json(os.path.join(out, "verify.json"), report)
            for c in report["checks"]:
                print(f"{c['name']}: {'PASS' if c['passed'] else 'FAIL'}")
            return 0
        mode = None if args.command == "run" else args.command
        summary = run_config(args.config, mode, args.out, args.seed, max(1, args.jobs))
        res = summary["results"]
        if summary["mode"] == "verify":
            for k, v in res.items():
                print(f"{k}: {'PASS' if v else 'FAIL'}")
        else:
            print(json.dumps(_clean(res), sort_keys=True))
        return 0
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, DomainError, InstabilityError) as exc:
        key = getattr(exc, "key", None)
        print(f"error{f' [{key}]' if key else ''}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
