"""Brute-force references.

Nothing here calls the sweeping solvers: the cylinder solution comes from
the method of images and the tiny-grid references assemble the whole
space-time scheme as one dense linear system ``L U = R(data)`` and use
dense factorisations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, DomainError

MAX_NY = 8
MAX_NT = 20


# ----------------------------------------------------------------------
# closed form on the cylinder


def dalembert_reference(w, y, t, T=None):
    """``v(y, t)`` for ``v_tt = v_yy`` on ``(0, 1)`` with ``v(0, t) = w(t)``,
    ``v(1, t) = 0`` and zero initial data.

    ``w`` is a callable (vectorised over time); it is extended by zero for
    negative arguments.  Image series:
    ``v = sum_{n>=0} w~(t - y - 2n) - w~(t + y - 2(n+1))``.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(y < 0) or np.any(y > 1):
        raise DomainError("y must lie in [0, 1]")
    if np.any(t < 0) or (T is not None and np.any(t > T)):
        raise DomainError("t outside [0, T]")
    y, t = np.broadcast_arrays(y, t)

    def wt(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s >= 0
        if np.any(pos):
            out[pos] = np.asarray(w(s[pos]), dtype=float)
        return out

    nmax = int(math.floor(float(np.max(t, initial=0.0)) / 2.0)) + 1
    v = np.zeros_like(y, dtype=float)
    for n in range(nmax + 1):
        v = v + wt(t - y - 2 * n) - wt(t + y - 2 * (n + 1))
    return float(v) if v.ndim == 0 else v


def fd_gradient(functional, point, h=1e-4, directions=None):
    """Central differences ``(F(x + h e) - F(x - h e)) / 2h`` along each unit
    vector (or along each given direction)."""
    if not h > 0:
        raise ConfigError("finite-difference step must be positive")
    x = np.asarray(point, dtype=float)
    if directions is None:
        directions = np.eye(x.size).reshape((x.size,) + x.shape)
    out = []
    for d in directions:
        d = np.asarray(d, dtype=float)
        out.append((functional(x + h * d) - functional(x - h * d)) / (2 * h))
    return np.array(out)


# ----------------------------------------------------------------------
# dense assembly


def _p1_mass_full(ny):
    h = 1.0 / ny
    M = np.zeros((ny + 1, ny + 1))
    for e in range(ny):
        M[e : e + 2, e : e + 2] += h / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return M


def _p1_stiffness(ny):
    h = 1.0 / ny
    K = np.zeros((ny + 1, ny + 1))
    for e in range(ny):
        K[e : e + 2, e : e + 2] += np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    return K[1:-1, 1:-1]


@dataclass(eq=False)
class DenseSystem:
    """The explicit scheme as one dense system on all space-time nodes.

    Unknown ordering is time-major: node ``(n, j)`` has index
    ``n (ny+1) + j``.  Every row has unit coefficient on the node it
    defines, so ``L^T lam = G`` gives the adjoint of each node value.
    """

    ny: int
    nt: int
    T: float
    k: float
    L: np.ndarray = field(repr=False)
    Sb: np.ndarray = field(repr=False)  # boundary trace -> state
    S0: np.ndarray = field(repr=False)  # v0 -> state
    S1: np.ndarray = field(repr=False)  # v1 -> state
    Sf: np.ndarray = field(repr=False)  # source -> state
    W: np.ndarray = field(repr=False)  # tracking weights tau_n alpha_n M_full
    Wsrc: np.ndarray = field(repr=False)  # source pairing tau_n M_full
    tau: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    stiffness: np.ndarray = field(repr=False)

    @property
    def N(self):
        return (self.nt + 1) * (self.ny + 1)

    @property
    def dt(self):
        return self.T / self.nt

    def idx(self, n, j):
        return n * (self.ny + 1) + j

    def state(self, b=None, v0=None, v1=None, f=None):
        U = np.zeros(self.N)
        if b is not None:
            U += self.Sb @ b
        if v0 is not None:
            U += self.S0 @ v0
        if v1 is not None:
            U += self.S1 @ v1
        if f is not None:
            U += self.Sf @ np.ravel(f)
        return U.reshape(self.nt + 1, self.ny + 1)

    def terminal_rows(self):
        """Matrices extracting ``v(T)`` and the backward difference ``v'(T)``
        on the interior nodes."""
        m = self.ny - 1
        ET = np.zeros((m, self.N))
        EP = np.zeros((m, self.N))
        for j in range(1, self.ny):
            ET[j - 1, self.idx(self.nt, j)] = 1.0
            EP[j - 1, self.idx(self.nt, j)] = 1.0 / self.dt
            EP[j - 1, self.idx(self.nt - 1, j)] = -1.0 / self.dt
        return ET, EP

    def adjoint(self, G):
        return linalg.solve(self.L.T, np.ravel(G)).reshape(self.nt + 1, self.ny + 1)

    def adjoint_field(self, lam, pT=None):
        P = np.zeros_like(lam)
        P[:-1, 1:-1] = (self.dt * self.ny) * lam[1:, 1:-1]
        if pT is not None:
            P[-1, 1:-1] = pT
        return P


def assemble_dense(ny, nt, T, k):
    """Assemble the scheme; refuses grids beyond ``ny <= 8``, ``nt <= 20``."""
    if ny > MAX_NY or nt > MAX_NT:
        raise ConfigError(f"dense oracle limited to ny <= {MAX_NY}, nt <= {MAX_NT} (got {ny}, {nt})")
    if ny < 3 or nt < 2:
        raise ConfigError("grid too small")
    h = 1.0 / ny
    dt = T / nt
    J = ny + 1
    N = (nt + 1) * J
    y = np.arange(J) * h
    al = 1.0 + k * dt * np.arange(nt + 1)

    def stencil(j):
        am = 1.0 - k * k * ((j - 0.5) * h) ** 2
        ap = 1.0 - k * k * ((j + 0.5) * h) ** 2
        c = k * y[j] / h
        return am / h**2, -(am + ap) / h**2, ap / h**2, c

    L = np.zeros((N, N))
    Rb = np.zeros((N, nt + 1))
    R0 = np.zeros((N, J))
    R1 = np.zeros((N, J))
    Rf = np.zeros((N, N))
    ix = lambda n, j: n * J + j  # noqa: E731
    for n in range(nt + 1):
        L[ix(n, 0), ix(n, 0)] = 1.0
        Rb[ix(n, 0), n] = 1.0
        L[ix(n, ny), ix(n, ny)] = 1.0
    for j in range(1, ny):
        r = ix(0, j)
        L[r, r] = 1.0
        R0[r, j] = 1.0
        lo, di, up, c = stencil(j)
        r = ix(1, j)
        L[r, r] = 1.0
        q = 0.5 * dt * dt / al[0] ** 2
        L[r, ix(0, j)] -= 1.0 + q * di
        L[r, ix(0, j - 1)] -= q * lo
        L[r, ix(0, j + 1)] -= q * up
        R1[r, j] += dt
        R1[r, j + 1] += 0.5 * dt * dt * c / al[0]
        R1[r, j - 1] -= 0.5 * dt * dt * c / al[0]
        Rf[r, ix(0, j)] = 0.5 * dt * dt
        for n in range(1, nt):
            r = ix(n + 1, j)
            q = dt * dt / al[n] ** 2
            s = dt * c / al[n]
            L[r, r] = 1.0
            L[r, ix(n, j)] -= 2.0 + q * di
            L[r, ix(n, j - 1)] -= q * lo - s
            L[r, ix(n, j + 1)] -= q * up + s
            L[r, ix(n - 1, j)] += 1.0
            L[r, ix(n - 1, j + 1)] += s
            L[r, ix(n - 1, j - 1)] -= s
            Rf[r, ix(n, j)] = dt * dt
    lu = linalg.lu_factor(L)
    Sb, S0, S1, Sf = (linalg.lu_solve(lu, R) for R in (Rb, R0, R1, Rf))
    tau = np.full(nt + 1, dt)
    tau[0] = tau[-1] = 0.5 * dt
    Mf = _p1_mass_full(ny)
    W = np.zeros((N, N))
    Wsrc = np.zeros((N, N))
    for n in range(nt + 1):
        sl = slice(n * J, (n + 1) * J)
        W[sl, sl] = tau[n] * al[n] * Mf
        Wsrc[sl, sl] = tau[n] * Mf
    return DenseSystem(ny, nt, T, k, L, Sb, S0, S1, Sf, W, Wsrc, tau,
                       Mf[1:-1, 1:-1].copy(), _p1_stiffness(ny))


def dense_for(problem):
    """Dense system matching a follower problem's grid and domain."""
    g = problem.grid
    return assemble_dense(g.ny, g.nt, g.T, problem.domain.k)


# ----------------------------------------------------------------------
# follower


def _data_state(ds, problem):
    if problem.init is None:
        return np.zeros(ds.N)
    return ds.S0 @ problem.init[0] + ds.S1 @ problem.init[1]


def dense_best_response_oracle(problem, w1, ds=None):
    """Follower response by dense normal equations; returns the trace on the
    time nodes (zero off Sigma2)."""
    ds = ds or dense_for(problem)
    s1 = np.asarray(problem.partition.sigma1)
    s2 = np.flatnonzero(problem.partition.sigma2)
    w1 = np.asarray(getattr(w1, "values", w1), dtype=float) * s1
    S2 = ds.Sb[:, s2]
    D2 = np.diag(ds.tau[s2])
    r0 = ds.Sb @ w1 + _data_state(ds, problem) - np.ravel(problem.v2_target)
    H = problem.sigma * D2 + S2.T @ ds.W @ S2
    z = linalg.solve(H, -S2.T @ ds.W @ r0, assume_a="pos")
    out = np.zeros(ds.nt + 1)
    out[s2] = z
    return out


def dense_J2(problem, w1, w2, ds=None):
    ds = ds or dense_for(problem)
    s1, s2 = problem.partition.sigma1, problem.partition.sigma2
    b = s1 * np.asarray(w1, dtype=float) + s2 * np.asarray(w2, dtype=float)
    r = ds.Sb @ b + _data_state(ds, problem) - np.ravel(problem.v2_target)
    return 0.5 * r @ ds.W @ r + 0.5 * problem.sigma * np.sum(ds.tau * s2 * np.asarray(w2) ** 2)


def dense_grad_J2(problem, w1, w2, ds=None):
    """Gradient of J2 in w2 per unit time weight (zero off Sigma2)."""
    ds = ds or dense_for(problem)
    s1, s2 = problem.partition.sigma1, problem.partition.sigma2
    w2 = np.asarray(w2, dtype=float)
    r = ds.Sb @ (s1 * np.asarray(w1, dtype=float) + s2 * w2) + _data_state(ds, problem) - np.ravel(problem.v2_target)
    e = ds.Sb.T @ (ds.W @ r)
    return s2 * (problem.sigma * w2 + e / ds.tau)


# ----------------------------------------------------------------------
# leader


def dense_A(problem, ds=None, delta=0.0):
    """Matrix of ``w1 -> (g'(T) + delta g(T), -g(T))`` on the Sigma1 nodes;
    returns ``(A, cols)`` with ``cols`` the Sigma1 node indices."""
    ds = ds or dense_for(problem)
    s1 = np.flatnonzero(problem.partition.sigma1)
    s2 = np.flatnonzero(problem.partition.sigma2)
    S1, S2 = ds.Sb[:, s1], ds.Sb[:, s2]
    H = problem.sigma * np.diag(ds.tau[s2]) + S2.T @ ds.W @ S2
    R = S1 - S2 @ linalg.solve(H, S2.T @ ds.W @ S1, assume_a="pos")
    ET, EP = ds.terminal_rows()
    return np.vstack([(EP + delta * ET) @ R, -ET @ R]), s1


def dense_Astar(problem, ds=None, delta=0.0):
    """Transpose of :func:`dense_A` for the pairings ``blockdiag(M, M)`` on the
    dual side and ``diag(tau)`` on Sigma1.  Shape ``(|Sigma1|, 2 (ny-1))``."""
    ds = ds or dense_for(problem)
    A, s1 = dense_A(problem, ds, delta)
    M = ds.mass
    P = linalg.block_diag(M, M)
    return (A.T @ P) / ds.tau[s1][:, None], s1


def dense_free_terminal(problem, ds=None):
    ds = ds or dense_for(problem)
    w2 = dense_best_response_oracle(problem, np.zeros(ds.nt + 1), ds)
    U = ds.Sb @ (problem.partition.sigma2 * w2) + _data_state(ds, problem)
    ET, EP = ds.terminal_rows()
    return ET @ U, EP @ U


def dense_dual_objective(lp, x, ds=None):
    """Dual objective on interior coefficients ``x = (f0, f1)``."""
    ds = ds or dense_for(lp.follower)
    As, s1 = dense_Astar(lp.follower, ds)
    vT, vTp = dense_free_terminal(lp.follower, ds)
    M, K = ds.mass, ds.stiffness
    m = ds.ny - 1
    w = As @ x
    f0, f1 = x[:m], x[m:]
    return (0.5 * np.sum(ds.tau[s1] * w * w) + (lp.v0_target - vT) @ M @ f1
            - (lp.v1_target - vTp) @ M @ f0
            + lp.rho1 * math.sqrt(max(f0 @ K @ f0, 0.0)) + lp.rho0 * math.sqrt(max(f1 @ M @ f1, 0.0)))


def dense_dual_solve(lp, tol=1e-13, max_iter=200000, ds=None):
    """Accelerated proximal gradient in dense arithmetic, with exact
    Lipschitz constant and function-value restarts.  Returns interior
    ``(f0, f1)`` concatenated."""
    ds = ds or dense_for(lp.follower)
    As, s1 = dense_Astar(lp.follower, ds)
    vT, vTp = dense_free_terminal(lp.follower, ds)
    M, K = ds.mass, ds.stiffness
    m = ds.ny - 1
    Q = As.T @ (ds.tau[s1][:, None] * As)
    lin = np.concatenate([-M @ (lp.v1_target - vTp), M @ (lp.v0_target - vT)])
    G = linalg.block_diag(K, M)
    Ginv = linalg.inv(G)
    Lam = float(linalg.eigh(Q, G, eigvals_only=True)[-1]) * 1.01 or 1.0
    step = 1.0 / Lam

    def F(x):
        return 0.5 * x @ Q @ x + lin @ x + lp.rho1 * math.sqrt(max(x[:m] @ K @ x[:m], 0)) + \
            lp.rho0 * math.sqrt(max(x[m:] @ M @ x[m:], 0))

    def P(x):
        z = x - step * (Ginv @ (Q @ x + lin))
        a, b = z[:m], z[m:]
        na, nb = math.sqrt(max(a @ K @ a, 0)), math.sqrt(max(b @ M @ b, 0))
        a = a * (max(0.0, 1 - step * lp.rho1 / na) if na > 0 else 0.0)
        b = b * (max(0.0, 1 - step * lp.rho0 / nb) if nb > 0 else 0.0)
        return np.concatenate([a, b])

    x = np.zeros(2 * m)
    y, t, Fx = x.copy(), 1.0, F(x)
    for _ in range(max_iter):
        xn = P(y)
        Fn = F(xn)
        if Fn > Fx:
            xn, t = P(x), 1.0
            Fn = F(xn)
            y = xn.copy()
        else:
            tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            y = xn + (t - 1) / tn * (xn - x)
            t = tn
        x, Fx = xn, Fn
        d = x - P(x)
        if math.sqrt(max(d @ G @ d, 0)) * Lam <= tol:
            break
    return x


def dense_kkt(lp, x, ds=None):
    """The quadruple ``(phi, psi, v, p)`` from two dense block systems.

    Leader block, unknowns ``(lam_phi, psi, z)``::

        L^T lam_phi - Wsrc diag(alpha) psi = G_T(f)
        L psi - B z                         = 0
        sigma tau z + lam_phi[:, 0]         = 0   on Sigma2

    Follower block, unknowns ``(v, lam_p, w2)``::

        L v - B w2          = R(w1, v0, v1)
        L^T lam_p - W v     = -W v2
        sigma tau w2 + lam_p[:, 0] = 0             on Sigma2

    ``w1 = lam_phi[:, 0] / tau`` on Sigma1.  Fields are normalised like the
    reverse sweep output.
    """
    fol = lp.follower
    ds = ds or dense_for(fol)
    N, J, nt, m = ds.N, ds.ny + 1, ds.nt, ds.ny - 1
    s1, s2 = np.asarray(fol.partition.sigma1), np.flatnonzero(fol.partition.sigma2)
    q = s2.size
    f0, f1 = x[:m], x[m:]
    M = ds.mass
    GT = np.zeros((nt + 1, J))
    GT[-1, 1:-1] += M @ f0 / ds.dt - M @ f1
    GT[-2, 1:-1] -= M @ f0 / ds.dt
    al = np.repeat(1.0 + fol.domain.k * ds.dt * np.arange(nt + 1), J)
    B = np.zeros((N, q))
    for c, n in enumerate(s2):
        B[ds.idx(n, 0), c] = 1.0
    # rows of L for boundary nodes are identities, so B z places z there
    C = np.zeros((q, N))
    for c, n in enumerate(s2):
        C[c, ds.idx(n, 0)] = 1.0
    big = np.block([
        [ds.L.T, -ds.Wsrc * al[None, :], np.zeros((N, q))],
        [np.zeros((N, N)), ds.L, -B],
        [C, np.zeros((q, N)), fol.sigma * np.diag(ds.tau[s2])],
    ])
    rhs = np.concatenate([np.ravel(GT), np.zeros(N), np.zeros(q)])
    sol = linalg.solve(big, rhs)
    lam_phi = sol[:N].reshape(nt + 1, J)
    psi = sol[N : 2 * N].reshape(nt + 1, J)
    w1 = s1 * lam_phi[:, 0] / ds.tau
    R = ds.L @ (ds.Sb @ (s1 * w1)) + (ds.L @ _data_state(ds, fol))
    big2 = np.block([
        [ds.L, np.zeros((N, N)), -B],
        [-ds.W, ds.L.T, np.zeros((N, q))],
        [np.zeros((q, N)), C, fol.sigma * np.diag(ds.tau[s2])],
    ])
    rhs2 = np.concatenate([R, -ds.W @ np.ravel(fol.v2_target), np.zeros(q)])
    sol2 = linalg.solve(big2, rhs2)
    v = sol2[:N].reshape(nt + 1, J)
    lam_p = sol2[N : 2 * N].reshape(nt + 1, J)
    w2 = np.zeros(nt + 1)
    w2[s2] = sol2[2 * N :]
    return {
        "phi": ds.adjoint_field(lam_phi, f0),
        "psi": psi,
        "v": v,
        "p": ds.adjoint_field(lam_p),
        "w1": w1,
        "w2": w2,
    }


# ----------------------------------------------------------------------
# golden fixtures

GOLDEN_VERSION = "v1"


def tiny_scenario(sigma=1.0, seed=7, mode="overlap"):
    """The fixed tiny-grid problem used by the golden files."""
    from .follower import FollowerProblem
    from .geometry import MovingDomain, build_partition
    from .spaces import GridSpec

    grid = GridSpec(6, 20, 2.0)
    dom = MovingDomain(0.2, 2.0)
    part = build_partition(mode, 2.0, split_time=0.9 if mode == "split" else None, grid=grid)
    rng = np.random.default_rng(seed)
    yy, tt = np.meshgrid(grid.y, grid.t)
    a, b = rng.uniform(-1, 1, 2)
    v2 = a * np.sin(np.pi * yy) * np.cos(tt) + b * (1 - yy) * np.sin(2 * tt)
    return FollowerProblem(grid, dom, part, sigma, v2, tol=1e-13, max_iter=2000)


def tiny_leader(sigma=1.0, rho=0.05):
    from .leader import LeaderProblem

    fol = tiny_scenario(sigma)
    y = fol.grid.y
    v0 = 0.3 * np.sin(np.pi * y)
    v1 = 0.2 * np.sin(2 * np.pi * y)
    return LeaderProblem(fol, v0, v1, rho, rho, inner_tol=1e-13, picard_tol=1e-13, picard_max_iter=2000)


def golden_fixtures():
    """Name -> 1-D or 2-D array of reference values."""
    out = {}
    ts = np.linspace(0.0, 0.75, 7)
    ys = np.linspace(0.0, 1.0, 5)
    Y, Tm = np.meshgrid(ys, ts)
    out["dalembert_sine"] = np.column_stack([Y.ravel(), Tm.ravel(),
                                             dalembert_reference(lambda s: np.sin(np.pi * s), Y.ravel(), Tm.ravel())])
    ny = 100
    y = np.linspace(0.0, 1.0, ny + 1)
    K = _p1_stiffness(ny)
    M = _p1_mass_full(ny)[1:-1, 1:-1]
    s = np.sin(np.pi * y[1:-1])
    Ms = M @ s
    out["norms_sine_ny100"] = np.array([s @ Ms, s @ K @ s, Ms @ linalg.solve(K, Ms)])
    out["riesz_sine_ny100"] = linalg.solve(K, Ms)
    fol = tiny_scenario()
    ds = dense_for(fol)
    w1 = np.cos(3 * fol.grid.t) * fol.partition.sigma1
    out["tiny_w1"] = w1
    out["tiny_w2"] = dense_best_response_oracle(fol, w1, ds)
    out["tiny_w2_sigma1000"] = dense_best_response_oracle(fol.replace(sigma=1000.0), w1, ds)
    out["tiny_A"] = dense_A(fol, ds)[0]
    lp = tiny_leader()
    x = dense_dual_solve(lp, ds=ds)
    out["tiny_fstar"] = x
    kkt = dense_kkt(lp, x, ds)
    for name in ("phi", "psi", "v", "p"):
        out[f"tiny_kkt_{name}"] = kkt[name]
    out["tiny_kkt_w"] = np.column_stack([kkt["w1"], kkt["w2"]])
    return out


def write_golden(directory):
    """Write every fixture as ``<name>.csv`` (shortest round-trip floats)."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, arr in sorted(golden_fixtures().items()):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        if arr.shape[0] == 1:
            arr = arr.T
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        paths.append(path)
    return paths


def read_golden(path):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return arr[:, 0] if arr.shape[1] == 1 else arr
