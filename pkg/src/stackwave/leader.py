"""The leader's relaxed controllability problem, solved through its
Fenchel-Rockafellar dual.

Primal: minimise ``1/2 |w1|^2_{L2(Sigma1)}`` subject to the Nash-coupled
terminal state lying in ``B_L2(v0, rho0) x B_H-1(v1, rho1)``.  With
``A w1 = (g'(T) + delta g(T), -g(T))`` (``g`` the Nash-coupled response to
``w1`` alone) and the free response ``vF`` (leader off), the dual reads

    min_f  1/2 |A* f|^2 + (v0 - vF(T), f1) - <v1 - vF'(T), f0>
           + rho1 |f0|_H10 + rho0 |f1|_L2

over ``f = (f0, f1)`` in ``H^1_0 x L^2``, and the leader is ``w1 = A* f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NonConvergence, ShapeError
from .follower import (
    FollowerProblem,
    best_response,
    best_response_batch,
    cg_batch,
    normal_apply,
    state_batch,
)
from .geometry import speed_refusal_message, validate_controllability_params
from .spaces import norm
from .wavesolver import (
    ControlTrace,
    Field,
    TerminalState,
    adjoint_field_batch,
    backward_batch,
    boundary_flux,
    source_cotangent,
    terminal_cotangent,
    terminal_state,
)


@dataclass
class DualPoint:
    """Dual variable: ``f0`` in the H^1_0 role, ``f1`` in the L2 role, both
    full-length grid functions."""

    f0: np.ndarray
    f1: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float)
        self.f1 = np.asarray(self.f1, dtype=float)
        if self.f0.shape != self.f1.shape or self.f0.ndim != 1:
            raise ShapeError("f0 and f1 must be 1-D grid functions of equal length")
        if self.f0[0] != 0.0 or self.f0[-1] != 0.0:
            raise ContractError("f0 must vanish at both endpoints")
        self.f1 = self.f1.copy()
        self.f1[0] = self.f1[-1] = 0.0

    @classmethod
    def from_interior(cls, x0, x1):
        pad = lambda a: np.concatenate([[0.0], np.asarray(a, dtype=float), [0.0]])  # noqa: E731
        return cls(pad(x0), pad(x1))

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.ny + 1), np.zeros(grid.ny + 1))

    def vector(self):
        return np.concatenate([self.f0[1:-1], self.f1[1:-1]])

    def __add__(self, other):
        return DualPoint(self.f0 + other.f0, self.f1 + other.f1)

    def __mul__(self, c):
        return DualPoint(c * self.f0, c * self.f1)

    __rmul__ = __mul__


@dataclass(eq=False)
class LeaderProblem:
    follower: FollowerProblem
    v0_target: np.ndarray
    v1_target: np.ndarray
    rho0: float
    rho1: float
    delta: float = 0.0
    coupling: str = "cg"
    theta: float = 1.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    inner_tol: float = 1e-12
    override_speed_check: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.rho0 > 0 and self.rho1 > 0):
            raise ConfigError("leader radii rho0, rho1 must be positive", key="leader.rho0")
        if self.delta < 0:
            raise ConfigError("leader.delta must be >= 0", key="leader.delta")
        if self.coupling not in ("cg", "picard"):
            raise ConfigError(f"unknown coupling solver {self.coupling!r}", key="leader.coupling")
        m = self.metric
        self.v0_target = m.interior(self.v0_target).copy()
        self.v1_target = m.interior(self.v1_target).copy()

    @property
    def grid(self):
        return self.follower.grid

    @property
    def domain(self):
        return self.follower.domain

    @property
    def metric(self):
        return self.follower.metric

    @property
    def n(self):
        return self.grid.ny - 1

    def with_radii(self, rho0, rho1):
        """Copy with new radii sharing the cached operators."""
        out = LeaderProblem(
            self.follower, self.v0_target, self.v1_target, rho0, rho1, self.delta,
            self.coupling, self.theta, self.picard_tol, self.picard_max_iter,
            self.inner_tol, self.override_speed_check,
        )
        out._cache.update({k: v for k, v in self._cache.items() if k in ("free", "normal", "lipschitz")})
        return out

    def with_targets(self, v0, v1):
        out = self.with_radii(self.rho0, self.rho1)
        out.v0_target = self.metric.interior(v0).copy()
        out.v1_target = self.metric.interior(v1).copy()
        return out


# ----------------------------------------------------------------------
# operators


def _hom(problem):
    return problem.follower.homogeneous()


def _a_batch(problem, W1):
    hom = _hom(problem)
    W2, hist, ok = best_response_batch(hom, W1, data=False, tol=problem.inner_tol)
    if not ok:
        raise NonConvergence("follower CG inside A did not converge", hist)
    V = state_batch(hom, W1, hom.partition.sigma2[:, None] * W2, data=False)
    gT = V[-1, 1:-1]
    gTp = (V[-1, 1:-1] - V[-2, 1:-1]) / problem.grid.dt
    return gTp + problem.delta * gT, -gT


def apply_A(problem: LeaderProblem, w1):
    """``(g'(T) + delta g(T), -g(T))`` for the Nash-coupled response ``g`` to
    ``w1`` with zero target and zero initial data (interior arrays)."""
    vals = w1.values if isinstance(w1, ControlTrace) else np.asarray(w1, dtype=float)
    if vals.shape != (problem.grid.nt + 1,):
        raise ShapeError("w1 does not match the time grid")
    if np.any(vals[~problem.follower.partition.sigma1] != 0):
        raise ContractError("w1 is nonzero outside Sigma1")
    a0, a1 = _a_batch(problem, vals[:, None])
    return a0[:, 0], a1[:, 0]


def _coupled_trace(problem, c0):
    """Solve ``(sigma + H0) z = -c0`` on Sigma2 for the psi boundary trace."""
    hom = _hom(problem)
    mask2 = hom.partition.sigma2[:, None]
    rhs = -(mask2 * c0)
    weights = hom.w2_weights
    if problem.coupling == "cg":
        z, hist, ok = cg_batch(
            lambda Z: normal_apply(hom, Z), rhs, np.zeros_like(rhs), weights,
            problem.picard_tol, problem.picard_max_iter,
        )
        if not ok:
            raise NonConvergence("coupled adjoint trace solve (CG) did not converge", hist)
        return z
    sigma, theta = hom.sigma, problem.theta
    z = np.zeros_like(rhs)
    w = weights[:, None]
    scale = np.maximum(1.0, np.sqrt(np.sum(w * rhs * rhs, axis=0))) / sigma
    hist = []
    for _ in range(problem.picard_max_iter):
        Hz = normal_apply(hom, z) - sigma * z
        z_new = (1 - theta) * z + theta * (rhs - Hz) / sigma
        step = np.sqrt(np.sum(w * (z_new - z) ** 2, axis=0)) / scale
        z = z_new
        hist.append(float(np.max(step)))
        if not np.all(np.isfinite(z)) or hist[-1] > 1e12:
            break
        if hist[-1] <= problem.picard_tol:
            return z
    raise NonConvergence(
        f"Picard iteration for the adjoint coupling failed (sigma={sigma}, theta={theta}); "
        "increase follower.sigma, decrease leader.theta or use leader.coupling=cg",
        hist,
    )


def _astar_batch(problem, X0, X1, fields=False):
    """``A*`` on interior dual coefficients of shape ``(n, B)``."""
    grid, metric = problem.grid, problem.metric
    hom = _hom(problem)
    tau = grid.time_weights[:, None]
    Gt = terminal_cotangent(grid, metric, X0, X1 - problem.delta * X0)
    c0 = backward_batch(grid, problem.domain, Gt)[0][:, 0, :] / tau
    z = _coupled_trace(problem, c0)
    Z = hom.partition.sigma2[:, None] * z
    psi = state_batch(hom, np.zeros_like(Z), Z, data=False)
    Vbar = backward_batch(grid, problem.domain, Gt + source_cotangent(grid, metric, hom.alphas[:, None, None] * psi))[0]
    W1 = hom.partition.sigma1[:, None] * (Vbar[:, 0, :] / tau)
    if fields:
        return W1, Vbar, psi
    return W1


def apply_Astar(problem: LeaderProblem, f: DualPoint) -> ControlTrace:
    """``A* f = -flux(phi)`` on Sigma1, where ``phi`` runs backward from
    ``(f0, f1)`` driven by ``alpha psi`` and ``psi`` runs forward from the
    boundary value ``flux(phi)/sigma`` on Sigma2."""
    W1 = _astar_batch(problem, f.f0[1:-1, None], f.f1[1:-1, None])
    return ControlTrace.masked(W1[:, 0], problem.follower.partition.sigma1)


def free_terminal(problem: LeaderProblem) -> TerminalState:
    """Terminal state with the leader switched off (follower still plays)."""
    if "free" not in problem._cache:
        fol = problem.follower.replace(tol=min(problem.follower.tol, problem.inner_tol))
        res = best_response(fol, np.zeros(problem.grid.nt + 1))
        problem._cache["free"] = terminal_state(res.v)
    return problem._cache["free"]


def _linear_term(problem):
    vf = free_terminal(problem)
    M = problem.metric.mass
    return np.concatenate([-(M @ (problem.v1_target - vf.vTprime)), M @ (problem.v0_target - vf.vT)])


def _require_delta_zero(problem):
    if problem.delta != 0.0:
        raise ConfigError(
            "the dual problem is only closed in the data for delta = 0", key="leader.delta"
        )


def normal_matrix(problem: LeaderProblem, chunk: int = 64):
    """``Q = Abar^T D1 Abar`` with ``Abar`` the matrix of ``A*`` on interior
    coefficients, assembled by applying ``A*`` to the canonical basis."""
    if "normal" not in problem._cache:
        n = problem.n
        cols = []
        for start in range(0, 2 * n, chunk):
            idx = np.arange(start, min(start + chunk, 2 * n))
            X = np.zeros((2 * n, idx.size))
            X[idx, np.arange(idx.size)] = 1.0
            cols.append(_astar_batch(problem, X[:n], X[n:]))
        Abar = np.hstack(cols)
        w1 = problem.follower.w1_weights
        problem._cache["astar"] = Abar
        problem._cache["normal"] = Abar.T @ (w1[:, None] * Abar)
    return problem._cache["normal"]


def _q_apply(problem, x, operator):
    """Euclidean ``Q x`` (equivalently ``blockdiag(M, M) A A* f``)."""
    n = problem.n
    if operator == "assembled":
        return normal_matrix(problem) @ x
    W1 = _astar_batch(problem, x[:n, None], x[n:, None])
    a0, a1 = _a_batch(problem, W1)
    M = problem.metric.mass
    return np.concatenate([M @ a0[:, 0], M @ a1[:, 0]])


def _riesz_pair(problem, e):
    """Metric (H10 x L2) representative of a Euclidean covector."""
    n = problem.n
    m = problem.metric
    return np.concatenate([m.solve_stiffness(e[:n]), m.solve_mass(e[n:])])


def _metric_norm(problem, x):
    n = problem.n
    m = problem.metric
    return math.sqrt(max(float(x[:n] @ (m.stiffness @ x[:n]) + x[n:] @ (m.mass @ x[n:])), 0.0))


def _norms(problem, x):
    n = problem.n
    m = problem.metric
    h = math.sqrt(max(float(x[:n] @ (m.stiffness @ x[:n])), 0.0))
    l2 = math.sqrt(max(float(x[n:] @ (m.mass @ x[n:])), 0.0))
    return h, l2


def _prox(problem, x, step):
    n = problem.n
    h, l2 = _norms(problem, x)
    out = x.copy()
    out[:n] *= max(0.0, 1.0 - step * problem.rho1 / h) if h > 0 else 0.0
    out[n:] *= max(0.0, 1.0 - step * problem.rho0 / l2) if l2 > 0 else 0.0
    return out


def dual_objective(problem: LeaderProblem, f: DualPoint, operator: str = "matrix_free") -> float:
    _require_delta_zero(problem)
    x = f.vector()
    if operator == "assembled":
        quad = 0.5 * float(x @ (normal_matrix(problem) @ x))
    else:
        w = apply_Astar(problem, f)
        quad = 0.5 * float(np.sum(problem.follower.w1_weights * w.values**2))
    h, l2 = _norms(problem, x)
    return quad + float(_linear_term(problem) @ x) + problem.rho1 * h + problem.rho0 * l2


def smooth_gradient(problem: LeaderProblem, f: DualPoint, operator: str = "matrix_free") -> DualPoint:
    """Gradient of the smooth part in the H10 x L2 metric."""
    _require_delta_zero(problem)
    x = f.vector()
    g = _riesz_pair(problem, _q_apply(problem, x, operator) + _linear_term(problem))
    return DualPoint.from_interior(g[: problem.n], g[problem.n:])


@dataclass
class DualOptions:
    tol: float = 1e-9
    max_iter: int = 20000
    power_iters: int = 20
    safety: float = 1.05
    operator: str = "assembled"
    seed: int = 0
    restart_tol: float = 1e-12


@dataclass
class DualLog:
    objective: list
    residual: list
    restarts: list
    lipschitz: float
    iterations: int
    converged: bool

    def as_rows(self):
        return [
            {"iter": i, "objective": o, "residual": r, "restart": int(i in set(self.restarts))}
            for i, (o, r) in enumerate(zip(self.objective, self.residual))
        ]


def lipschitz_estimate(problem, operator="assembled", iters=20, safety=1.05, seed=0):
    key = ("lipschitz", operator, iters, safety, seed)
    if key in problem._cache:
        return problem._cache[key]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(2 * problem.n) + 1.0
    x /= _metric_norm(problem, x)
    lam = 0.0
    for _ in range(iters):
        y = _riesz_pair(problem, _q_apply(problem, x, operator))
        lam = _metric_norm(problem, y)
        if lam == 0:
            break
        x = y / lam
    out = safety * lam if lam > 0 else 1.0
    problem._cache[key] = out
    problem._cache["lipschitz"] = out
    return out


def minimize_dual(problem: LeaderProblem, opts: DualOptions | None = None):
    """Accelerated proximal gradient with function-value restarts.

    The metric is H10 for ``f0`` and L2 for ``f1`` so the prox of the two
    radius terms is exact block shrinkage.  Returns ``(fstar, log)``.
    """
    opts = opts or DualOptions()
    _require_delta_zero(problem)
    report = validate_controllability_params(problem.domain)
    if not report.speed_ok and not problem.override_speed_check:
        raise ConfigError(speed_refusal_message(problem.domain), key="k")
    lin = _linear_term(problem)
    op = opts.operator
    Lam = lipschitz_estimate(problem, op, opts.power_iters, opts.safety, opts.seed)
    step = 1.0 / Lam

    # Q is linear, so Q x and Q y are carried along the iteration and each
    # step costs one operator application
    def F(x, qx):
        h, l2 = _norms(problem, x)
        return 0.5 * float(x @ qx) + float(lin @ x) + problem.rho1 * h + problem.rho0 * l2

    def prox_step(x, qx):
        return _prox(problem, x - step * _riesz_pair(problem, qx + lin), step)

    def Q(x):
        return _q_apply(problem, x, op)

    x = np.zeros(2 * problem.n)
    qx = np.zeros_like(x)
    scale = max(1.0, _metric_norm(problem, _riesz_pair(problem, lin)))
    Fx = F(x, qx)
    objective = [Fx]
    res = Lam * _metric_norm(problem, x - prox_step(x, qx))
    residual = [res]
    restarts = []
    y, qy, t = x.copy(), qx.copy(), 1.0
    slack = lambda v: opts.restart_tol * max(1.0, abs(v))  # noqa: E731
    it = 0
    while res > opts.tol * scale and it < opts.max_iter:
        it += 1
        x_new = prox_step(y, qy)
        q_new = Q(x_new)
        F_new = F(x_new, q_new)
        if F_new > Fx + slack(Fx):
            restarts.append(it)
            x_new = prox_step(x, qx)
            q_new = Q(x_new)
            F_new = F(x_new, q_new)
            if F_new > Fx + slack(Fx):
                raise NonConvergence(
                    f"dual objective increased after restart ({Fx:.6e} -> {F_new:.6e}); "
                    "Lipschitz estimate too small",
                    objective,
                )
            y, qy, t = x_new.copy(), q_new.copy(), 1.0
        else:
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            beta = (t - 1) / t_new
            y = x_new + beta * (x_new - x)
            qy = q_new + beta * (q_new - qx)
            t = t_new
        x, qx, Fx = x_new, q_new, F_new
        res = Lam * _metric_norm(problem, x - prox_step(x, qx))
        objective.append(Fx)
        residual.append(res)
    converged = res <= opts.tol * scale
    log = DualLog(objective, residual, restarts, Lam, it, converged)
    fstar = DualPoint.from_interior(x[: problem.n], x[problem.n:])
    if not converged:
        err = NonConvergence(
            f"dual solver stopped after {it} iterations with residual {res:.3e}", residual
        )
        err.fstar, err.log = fstar, log
        raise err
    return fstar, log


# ----------------------------------------------------------------------
# recovery and certificates


@dataclass
class LeaderSolution:
    w1: ControlTrace
    w2: ControlTrace
    v: Field
    J: float
    terminal: TerminalState
    nash_stats: dict


def recover_leader(problem: LeaderProblem, fstar: DualPoint) -> LeaderSolution:
    w1 = apply_Astar(problem, fstar)
    fol = problem.follower.replace(tol=min(problem.follower.tol, problem.inner_tol))
    res = best_response(fol, w1)
    J = 0.5 * float(np.sum(problem.follower.w1_weights * w1.values**2))
    return LeaderSolution(w1, res.w2, res.v, J, terminal_state(res.v), res.stats)


@dataclass
class ControllabilityResidual:
    d0: float
    d1: float
    inside: bool

    def __iter__(self):
        return iter((self.d0, self.d1, self.inside))


def controllability_residual(problem: LeaderProblem, terminal: TerminalState, slack: float = 0.0):
    m = problem.metric
    d0 = norm(m, "L2", terminal.vT - problem.v0_target)
    d1 = norm(m, "Hm1", terminal.vTprime - problem.v1_target)
    inside = d0 <= problem.rho0 + slack and d1 <= problem.rho1 + slack
    return ControllabilityResidual(d0, d1, inside)


@dataclass
class VIReport:
    min_value: float
    values: np.ndarray = field(repr=False)
    residual: float
    prox_residual: float
    passed: bool
    tol: float


def vi_residual(problem: LeaderProblem, f: DualPoint, directions: int = 20, rng=None,
                tol: float = 1e-6, terminal: TerminalState | None = None, candidates=None):
    """Sample the variational inequality characterising the optimal dual point.

    For each candidate ``fh`` evaluates

        <v'(T) - v1, fh0 - f0> - (v(T) - v0, fh1 - f1)
            + rho1 (|fh0| - |f0|) + rho0 (|fh1| - |f1|)

    with ``(v(T), v'(T))`` produced by the recovered controls.  Candidates
    are ``0``, ``f`` plus/minus each unit canonical direction and ``f`` plus
    ``directions`` random unit directions (or the explicit ``candidates``).
    """
    m = problem.metric
    n = problem.n
    if terminal is None:
        terminal = recover_leader(problem, f).terminal
    gv = np.concatenate([m.mass @ (terminal.vTprime - problem.v1_target),
                         -(m.mass @ (terminal.vT - problem.v0_target))])
    x = f.vector()
    h0, l0 = _norms(problem, x)

    def value(xh):
        h, l2 = _norms(problem, xh)
        return float(gv @ (xh - x)) + problem.rho1 * (h - h0) + problem.rho0 * (l2 - l0)

    if candidates is not None:
        pts = [c.vector() if isinstance(c, DualPoint) else np.asarray(c) for c in candidates]
    else:
        pts = [np.zeros_like(x)]
        diag = np.concatenate([m.stiffness.diagonal(), m.mass.diagonal()])
        for i in range(2 * n):
            e = np.zeros_like(x)
            e[i] = 1.0 / math.sqrt(diag[i])
            pts.extend([x + e, x - e])
        rng = np.random.default_rng(rng)
        for _ in range(directions):
            r = rng.standard_normal(2 * n)
            pts.append(x + r / _metric_norm(problem, r))
    values = np.array([value(p) for p in pts])
    Lam = problem._cache.get("lipschitz", 1.0)
    g = _riesz_pair(problem, gv)
    prox_res = Lam * _metric_norm(problem, x - _prox(problem, x - g / Lam, 1.0 / Lam))
    mv = float(values.min()) if values.size else 0.0
    resid = max(0.0, -mv)
    return VIReport(mv, values, resid, prox_res, resid <= tol, tol)


def assemble_optimality_system(problem: LeaderProblem, fstar: DualPoint):
    """The quadruple ``{phi, psi, v, p}`` and its boundary consistency.

    Residuals (weighted L2 over the time nodes of the named segment):
    ``leader``: w1 + flux(phi) on Sigma1; ``follower``: w2 - flux(p)/sigma
    on Sigma2; ``psi``: psi(0,.) - flux(phi)/sigma on Sigma2; ``state``:
    v(0,.) - (w1 + w2) on the boundary.
    """
    grid = problem.grid
    fol = problem.follower.replace(tol=min(problem.follower.tol, problem.inner_tol))
    W1, Vbar, psi = _astar_batch(problem, fstar.f0[1:-1, None], fstar.f1[1:-1, None], fields=True)
    phi = Field(adjoint_field_batch(grid, Vbar, fstar.f0[1:-1, None])[..., 0], grid,
                cotrace=Vbar[:, 0, 0].copy())
    psi = Field(psi[..., 0], grid)
    s1, s2 = fol.partition.sigma1, fol.partition.sigma2
    w1 = ControlTrace.masked(W1[:, 0], s1)
    res = best_response(fol, w1)
    flux_phi = boundary_flux(phi, problem.domain).values
    flux_p = boundary_flux(res.p, problem.domain).values
    sig = fol.sigma
    tw = grid.time_weights

    def wn(a, mask):
        return float(np.sqrt(np.sum(tw * mask * a * a)))

    checks = {
        "leader": (wn(w1.values + flux_phi, s1), wn(w1.values, s1)),
        "follower": (wn(res.w2.values - flux_p / sig, s2), wn(res.w2.values, s2)),
        "psi": (wn(psi.values[:, 0] - flux_phi / sig, s2), wn(psi.values[:, 0], s2)),
        "state": (wn(res.v.values[:, 0] - (s1 * w1.values + s2 * res.w2.values), s1 | s2),
                  wn(res.v.values[:, 0], s1 | s2)),
    }
    bound = 10 * max(problem.inner_tol, problem.picard_tol, fol.tol)
    consistency = {
        name: {"residual": r, "scale": s, "ok": r <= bound * max(1.0, s)}
        for name, (r, s) in checks.items()
    }
    return {"phi": phi, "psi": psi, "v": res.v, "p": res.p, "w1": w1, "w2": res.w2,
            "consistency": consistency}
