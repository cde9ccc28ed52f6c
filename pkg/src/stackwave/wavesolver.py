"""Explicit three-level scheme for ``v'' + L v = f`` on the cylinder and its
exact discrete transpose.

Interior update (``n >= 1``)::

    v^{n+1} = 2 v^n - v^{n-1} + dt^2 A_n v^n + dt C_n (v^n - v^{n-1}) + dt^2 f^n

with ``A_n u = D^-(a_{j+1/2} D^+ u)``, ``a = beta/alpha`` taken at half nodes, and
``C_n u = -(gamma/alpha) D_0 u``.  Dirichlet values are written after each
step: ``v^n_0 = b^n`` (the control) and ``v^n_{ny} = 0``.  The first step is
the Taylor start ``v^1 = v^0 + dt v_1 + dt^2/2 (A_0 v^0 + C_0 v_1 + f^0)``.

The adjoint is obtained by running the transposed steps in reverse order,
so duality identities between forward and backward solves hold to
round-off.  Boundary fluxes follow the outward-normal convention at
``y = 0``: ``flux(p) = (1/alpha^2) dp/dnu = -(1/alpha^2) p_y(0, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ConfigError, ContractError, InstabilityError, ShapeError
from .geometry import MovingDomain
from .spaces import GridSpec, SpatialMetric, build_metric

_CHECK_EVERY = 100
_OVERFLOW = 1e150


@dataclass
class Field:
    """Samples on the space-time grid, shape ``(nt + 1, ny + 1)``.

    Adjoint fields produced by :func:`solve_backward_transpose` also carry
    ``cotrace``: the exact cotangent of the Dirichlet values at ``y = 0``.
    """

    values: np.ndarray
    grid: GridSpec
    cotrace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ShapeError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.shape), grid)

    def __add__(self, other):
        return Field(self.values + other.values, self.grid)

    def __sub__(self, other):
        return Field(self.values - other.values, self.grid)


@dataclass
class ControlTrace:
    """Dirichlet data at ``y = 0`` on the time nodes, zero outside ``mask``."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ShapeError("a control trace is a 1-D time series")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ShapeError(f"mask shape {self.mask.shape} != values shape {self.values.shape}")
        if np.any(self.values[~self.mask] != 0.0):
            raise ContractError("control trace is nonzero outside its boundary segment")

    @classmethod
    def masked(cls, values, mask):
        """Build a trace by zeroing ``values`` outside ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        return cls(np.where(mask, np.asarray(values, dtype=float), 0.0), mask)

    def norm(self, grid: GridSpec) -> float:
        w = grid.time_weights * self.mask
        return float(np.sqrt(np.sum(w * self.values**2)))


@dataclass
class TerminalState:
    """``(v(T), v'(T))`` on the interior nodes."""

    vT: np.ndarray
    vTprime: np.ndarray

    def __post_init__(self):
        self.vT = np.asarray(self.vT, dtype=float)
        self.vTprime = np.asarray(self.vTprime, dtype=float)
        if self.vT.shape != self.vTprime.shape:
            raise ShapeError("terminal components differ in shape")


@lru_cache(maxsize=64)
def metric_for(grid: GridSpec) -> SpatialMetric:
    return build_metric(grid)


@lru_cache(maxsize=64)
def _operators(ny: int, k: float):
    """Full-size (``ny+1``) stencils at ``alpha = 1`` and their transposes.

    Boundary rows are empty: the update only produces interior values.
    """
    h = 1.0 / ny
    y = np.linspace(0.0, 1.0, ny + 1)
    yh = 0.5 * (y[:-1] + y[1:])
    a = 1.0 - k * k * yh**2
    j = np.arange(1, ny)
    rows = np.concatenate([j, j, j])
    cols = np.concatenate([j - 1, j, j + 1])
    lap = np.concatenate([a[j - 1], -(a[j - 1] + a[j]), a[j]]) / h**2
    A = sparse.csr_matrix((lap, (rows, cols)), shape=(ny + 1, ny + 1))
    c = 2.0 * k * y[j] / (2.0 * h)
    C = sparse.csr_matrix(
        (np.concatenate([-c, c]), (np.concatenate([j, j]), np.concatenate([j - 1, j + 1]))),
        shape=(ny + 1, ny + 1),
    )
    return A, C, A.T.tocsr(), C.T.tocsr()


def _alphas(grid: GridSpec, domain: MovingDomain):
    return 1.0 + domain.k * grid.t


def _check_grid(grid: GridSpec, domain: MovingDomain):
    if abs(grid.T - domain.T) > 1e-12 * max(1.0, domain.T):
        raise ContractError(f"grid horizon {grid.T} != domain horizon {domain.T}")
    if grid.dt > grid.dy:
        raise ConfigError(f"CFL violated: dt={grid.dt} > dy={grid.dy}", key="grid.cfl")


def forward_batch(grid, domain, b=None, f=None, v0=None, v1=None):
    """Batched forward solve.

    ``b``: ``(nt+1, B)``, ``f``: ``(nt+1, ny+1, B)``, ``v0``/``v1``:
    ``(ny+1, B)``; any may be ``None``.  Returns ``(nt+1, ny+1, B)``.
    """
    _check_grid(grid, domain)
    nt, ny, dt = grid.nt, grid.ny, grid.dt
    A, C, _, _ = _operators(ny, domain.k)
    al = _alphas(grid, domain)
    batch = next(x.shape[-1] for x in (b, f, v0, v1) if x is not None) if any(
        x is not None for x in (b, f, v0, v1)
    ) else 1
    V = np.zeros((nt + 1, ny + 1, batch))
    zero = np.zeros((ny + 1, batch))
    v0 = zero if v0 is None else v0
    v1 = zero if v1 is None else v1
    V[0] = v0
    V[0, -1] = 0.0
    if b is not None:
        V[0, 0] = b[0]
    rhs = (A @ V[0]) / al[0] ** 2 + (C @ v1) / al[0]
    if f is not None:
        rhs += f[0]
    V[1] = V[0] + dt * v1 + 0.5 * dt * dt * rhs
    V[1, 0] = 0.0 if b is None else b[1]
    V[1, -1] = 0.0
    for n in range(1, nt):
        vn, vm = V[n], V[n - 1]
        nxt = 2.0 * vn - vm + (dt * dt / al[n] ** 2) * (A @ vn) + (dt / al[n]) * (C @ (vn - vm))
        if f is not None:
            nxt += dt * dt * f[n]
        nxt[0] = 0.0 if b is None else b[n + 1]
        nxt[-1] = 0.0
        V[n + 1] = nxt
        if n % _CHECK_EVERY == 0:
            _check_finite(nxt, n + 1)
    _check_finite(V[nt], nt)
    return V


def _check_finite(arr, n):
    if not np.all(np.isfinite(arr)) or np.max(np.abs(arr), initial=0.0) > _OVERFLOW:
        raise InstabilityError(f"solution blew up at time step {n}; check the grid and CFL factor")


def backward_batch(grid, domain, G):
    """Transpose of :func:`forward_batch` applied to a cotangent field.

    ``G`` has shape ``(nt+1, ny+1, B)`` and represents the linear functional
    ``V -> sum(G * V)``.  Returns ``(Vbar, v0bar, v1bar, fbar)`` where ``Vbar``
    is the total adjoint of every node value; ``Vbar[:, 0]`` is the gradient
    with respect to the boundary data.
    """
    _check_grid(grid, domain)
    nt, ny, dt = grid.nt, grid.ny, grid.dt
    _, _, At, Ct = _operators(ny, domain.k)
    al = _alphas(grid, domain)
    Vbar = np.array(G, dtype=float, copy=True)
    fbar = np.zeros_like(Vbar)
    v1bar = None
    for m in range(nt, 0, -1):
        U = Vbar[m].copy()
        U[0] = 0.0
        U[-1] = 0.0
        n = m - 1
        if m >= 2:
            CtU = Ct @ U
            Vbar[n] += 2.0 * U + (dt * dt / al[n] ** 2) * (At @ U) + (dt / al[n]) * CtU
            Vbar[n - 1] -= U + (dt / al[n]) * CtU
            fbar[n] = dt * dt * U
        else:
            Vbar[0] += U + (0.5 * dt * dt / al[0] ** 2) * (At @ U)
            v1bar = dt * U + (0.5 * dt * dt / al[0]) * (Ct @ U)
            fbar[0] = 0.5 * dt * dt * U
    v0bar = Vbar[0].copy()
    v0bar[0] = 0.0
    v0bar[-1] = 0.0
    return Vbar, v0bar, v1bar, fbar


def terminal_cotangent(grid, metric, pT, pTprime):
    """Cotangent of ``V -> <V'(T), pT> - (V(T), pTprime)`` with M-pairings and
    ``V'(T)`` the backward difference; inputs are interior ``(ny-1, B)``."""
    G = np.zeros(grid.shape + (pT.shape[-1],))
    mp = metric.mass @ pT
    G[-1, 1:-1] += mp / grid.dt - metric.mass @ pTprime
    G[-2, 1:-1] -= mp / grid.dt
    return G


def source_cotangent(grid, metric, s):
    """Cotangent of ``V -> sum_n tau_n V^n . M_full s^n`` for ``s`` of shape
    ``(nt+1, ny+1, B)``."""
    tau = grid.time_weights
    Mf = metric.mass_full
    out = np.empty_like(s)
    for n in range(grid.nt + 1):
        out[n] = tau[n] * (Mf @ s[n])
    return out


def adjoint_field_batch(grid, Vbar, pT=None):
    """Normalise a raw reverse sweep into an adjoint field approximating the
    continuous backward solution: ``P^n = (dt/dy) Vbar^{n+1}`` on the
    interior, ``P^{nt} = pT``."""
    P = np.zeros_like(Vbar)
    P[:-1, 1:-1] = (grid.dt / grid.dy) * Vbar[1:, 1:-1]
    if pT is not None:
        P[-1, 1:-1] = pT
    return P


# ----------------------------------------------------------------------
# public single-instance API


def _as_boundary(grid, boundary):
    if boundary is None:
        return None
    if isinstance(boundary, ControlTrace):
        boundary = [boundary]
    if isinstance(boundary, (list, tuple)):
        b = np.zeros(grid.nt + 1)
        for tr in boundary:
            if not isinstance(tr, ControlTrace):
                tr = ControlTrace(tr)
            if tr.values.shape != (grid.nt + 1,):
                raise ShapeError(f"trace length {tr.values.size} != nt+1={grid.nt + 1}")
            b += tr.values
        return b
    b = np.asarray(boundary, dtype=float)
    if b.shape != (grid.nt + 1,):
        raise ShapeError(f"boundary length {b.shape} != nt+1={grid.nt + 1}")
    return b


def _as_field_array(grid, src):
    if src is None:
        return None
    if isinstance(src, Field):
        if src.grid != grid:
            raise ContractError("field was built on a different grid")
        return src.values
    arr = np.asarray(src, dtype=float)
    if arr.shape != grid.shape:
        raise ShapeError(f"field shape {arr.shape} != grid shape {grid.shape}")
    return arr


def solve_forward(grid, domain, boundary=None, source=None, init=None) -> Field:
    """Solve the state equation with Dirichlet control ``boundary`` at
    ``y = 0`` (a trace, a list of traces that superpose, or an array)."""
    b = _as_boundary(grid, boundary)
    f = _as_field_array(grid, source)
    v0 = v1 = None
    if init is not None:
        v0 = np.asarray(init[0], dtype=float)
        v1 = np.asarray(init[1], dtype=float)
        if v0.shape != (grid.ny + 1,) or v1.shape != (grid.ny + 1,):
            raise ShapeError("initial data must be full-length grid functions")
        v0, v1 = v0[:, None], v1[:, None]
    V = forward_batch(
        grid,
        domain,
        None if b is None else b[:, None],
        None if f is None else f[..., None],
        v0,
        v1,
    )
    return Field(V[..., 0], grid)


def solve_backward_transpose(grid, domain, source=None, terminal=None) -> Field:
    """Adjoint solve by reversed transposed steps.

    ``source`` is a density ``s`` (Field or array); ``terminal`` a pair
    ``(pT, pTprime)`` of interior or full-length grid functions.  The result
    ``P`` satisfies, for zero initial data and zero forward source,

        sum_n tau_n v^n.M s^n + <v'(T), pT> - (v(T), pTprime)
            = -sum_n tau_n b^n flux(P)^n

    for every boundary input ``b`` with response ``v``.
    """
    metric = metric_for(grid)
    s = _as_field_array(grid, source)
    G = np.zeros(grid.shape + (1,))
    if s is not None:
        G += source_cotangent(grid, metric, s[..., None])
    pT = None
    if terminal is not None:
        pT = metric.interior(terminal[0])[:, None]
        pTp = metric.interior(terminal[1])[:, None]
        G += terminal_cotangent(grid, metric, pT, pTp)
    Vbar, _, _, _ = backward_batch(grid, domain, G)
    P = adjoint_field_batch(grid, Vbar, pT)
    return Field(P[..., 0], grid, cotrace=Vbar[:, 0, 0].copy())


def boundary_flux(field: Field, domain: MovingDomain, method: str = "transpose") -> ControlTrace:
    """Scaled outward normal derivative ``(1/alpha^2) dp/dnu`` at ``y = 0``.

    ``transpose`` returns the exact discrete functional (cotangent of the
    Dirichlet data divided by the time weights) and needs a field produced by
    :func:`solve_backward_transpose`; ``onesided`` uses the second-order
    one-sided difference and works for any field.
    """
    grid = field.grid
    if method == "transpose":
        if field.cotrace is None:
            raise ContractError("transpose flux needs a field from solve_backward_transpose")
        return ControlTrace(-field.cotrace / grid.time_weights)
    if method == "onesided":
        p = field.values
        al = _alphas(grid, domain)
        dpdy = (-3.0 * p[:, 0] + 4.0 * p[:, 1] - p[:, 2]) / (2.0 * grid.dy)
        return ControlTrace(-dpdy / al**2)
    raise ConfigError(f"unknown flux method {method!r}")


def terminal_state(field: Field) -> TerminalState:
    v = field.values
    if v.shape[0] < 2:
        raise ShapeError("terminal state needs at least two time levels")
    return TerminalState(v[-1, 1:-1].copy(), (v[-1, 1:-1] - v[-2, 1:-1]) / field.grid.dt)


def discrete_energy(field: Field) -> np.ndarray:
    """Energy on the half time levels ``n + 1/2`` (length ``nt``):
    ``1/2 |(v^{n+1} - v^n)/dt|^2 + 1/2 <v_y^n, v_y^{n+1}>`` with grid sums
    weighted by dy.  For ``k = 0`` and homogeneous boundary data the
    three-level scheme conserves it exactly."""
    v = field.values
    g = field.grid
    vt = np.diff(v, axis=0) / g.dt
    vy = np.diff(v, axis=1) / g.dy
    return 0.5 * g.dy * (np.sum(vt**2, axis=1) + np.sum(vy[:-1] * vy[1:], axis=1))
