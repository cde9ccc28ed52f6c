"""The follower's tracking problem and its Nash equilibrium.

For a fixed leader control ``w1`` the follower minimises

    J2(w1, w2) = 1/2 sum_n tau_n alpha_n (v - v2)^n . M_full (v - v2)^n
               + sigma/2 sum_{n in Sigma2} tau_n w2_n^2

over traces ``w2`` on its boundary segment.  ``J2`` is a strictly convex
quadratic in ``w2``; it is minimised by conjugate gradients where each
operator application costs one forward and one adjoint solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, NonConvergence, ShapeError
from .geometry import BoundaryPartition, MovingDomain
from .spaces import GridSpec
from .wavesolver import (
    ControlTrace,
    Field,
    adjoint_field_batch,
    backward_batch,
    forward_batch,
    metric_for,
    source_cotangent,
)


@dataclass(frozen=True, eq=False)
class FollowerProblem:
    grid: GridSpec
    domain: MovingDomain
    partition: BoundaryPartition
    sigma: float
    v2_target: np.ndarray = field(repr=False)
    init: tuple | None = field(default=None, repr=False)
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"follower.sigma={self.sigma} must be positive", key="follower.sigma")
        v2 = self.v2_target
        if isinstance(v2, Field):
            v2 = v2.values
        v2 = np.asarray(v2, dtype=float)
        if v2.ndim == 0:
            v2 = np.full(self.grid.shape, float(v2))
        if v2.shape != self.grid.shape:
            raise ShapeError(f"v2 target shape {v2.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "v2_target", v2)
        if self.partition.sigma1.shape != (self.grid.nt + 1,):
            raise ShapeError("partition masks do not match the time grid")
        if self.init is not None:
            v0, v1 = (np.asarray(a, dtype=float) for a in self.init)
            if v0.shape != (self.grid.ny + 1,) or v1.shape != v0.shape:
                raise ShapeError("initial data must be full-length grid functions")
            object.__setattr__(self, "init", (v0, v1))

    @property
    def metric(self):
        return metric_for(self.grid)

    @property
    def alphas(self):
        return 1.0 + self.domain.k * self.grid.t

    @property
    def w1_weights(self):
        return self.grid.time_weights * self.partition.sigma1

    @property
    def w2_weights(self):
        return self.grid.time_weights * self.partition.sigma2

    def replace(self, **changes):
        kw = dict(
            grid=self.grid,
            domain=self.domain,
            partition=self.partition,
            sigma=self.sigma,
            v2_target=self.v2_target,
            init=self.init,
            tol=self.tol,
            max_iter=self.max_iter,
        )
        kw.update(changes)
        return FollowerProblem(**kw)

    def homogeneous(self):
        """Same operator with zero target and zero initial data."""
        return self.replace(v2_target=np.zeros(self.grid.shape), init=None)


class NashResult(NamedTuple):
    w2: ControlTrace
    v: Field
    p: Field
    stats: dict


# ----------------------------------------------------------------------
# batched kernels (columns are independent instances)


def _trace_values(problem, trace, mask, name):
    if trace is None:
        return np.zeros(problem.grid.nt + 1)
    vals = trace.values if isinstance(trace, ControlTrace) else np.asarray(trace, dtype=float)
    if vals.shape != (problem.grid.nt + 1,):
        raise ShapeError(f"{name} has length {vals.shape}, expected {problem.grid.nt + 1}")
    if np.any(vals[~mask] != 0.0):
        raise ContractError(f"{name} is nonzero outside its boundary segment")
    return vals


def state_batch(problem, W1, W2, data=True):
    """Forward states for traces ``W1``, ``W2`` of shape ``(nt+1, B)``."""
    p1 = problem.partition.sigma1[:, None]
    p2 = problem.partition.sigma2[:, None]
    b = p1 * W1 + p2 * W2
    v0 = v1 = None
    if data and problem.init is not None:
        B = b.shape[1]
        v0 = np.repeat(problem.init[0][:, None], B, axis=1)
        v1 = np.repeat(problem.init[1][:, None], B, axis=1)
    return forward_batch(problem.grid, problem.domain, b, None, v0, v1)


def adjoint_batch(problem, V, data=True):
    """Reverse sweep driven by ``alpha (V - v2)``; returns ``(Vbar, c)`` with
    ``c`` the gradient of the tracking term w.r.t. the boundary values per
    unit time weight."""
    resid = V - problem.v2_target[..., None] if data else V
    s = problem.alphas[:, None, None] * resid
    G = source_cotangent(problem.grid, problem.metric, s)
    Vbar = backward_batch(problem.grid, problem.domain, G)[0]
    c = Vbar[:, 0, :] / problem.grid.time_weights[:, None]
    return Vbar, c


def normal_apply(problem, Z):
    """``sigma Z + d(tracking)/d(w2)`` of the homogeneous problem: the
    Hessian of J2 in the follower's weighted inner product."""
    mask2 = problem.partition.sigma2[:, None]
    V = state_batch(problem, np.zeros_like(Z), Z, data=False)
    _, c = adjoint_batch(problem, V, data=False)
    return problem.sigma * Z + mask2 * c


def gradient_batch(problem, W1, W2, data=True):
    V = state_batch(problem, W1, W2, data)
    Vbar, c = adjoint_batch(problem, V, data)
    return problem.sigma * W2 + problem.partition.sigma2[:, None] * c, V, Vbar


def cg_batch(apply, rhs, x0, weights, tol, max_iter, ref=None):
    """Conjugate gradients for ``H x = rhs`` column by column, with ``H``
    self-adjoint in the inner product ``sum(weights * x * y)``.

    Stops a column when its residual norm is below ``tol * max(1, ref)``
    (``ref`` defaults to the norm of ``rhs``).  Returns ``(x, history,
    converged)``; ``history`` lists the max relative residual per
    iteration.
    """
    w = weights[:, None]

    def dot(a, b):
        return np.sum(w * a * b, axis=0)

    x = np.array(x0, dtype=float, copy=True)
    r = rhs - apply(x) if np.any(x) else np.array(rhs, dtype=float, copy=True)
    ref = np.sqrt(dot(rhs, rhs)) if ref is None else np.asarray(ref, dtype=float)
    thresh = tol * np.maximum(1.0, ref)
    rr = dot(r, r)
    d = r.copy()
    history = [float(np.max(np.sqrt(rr) / np.maximum(1.0, ref)))]
    active = np.sqrt(rr) > thresh
    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        Hd = apply(d)
        dHd = dot(d, Hd)
        a = np.where(active & (dHd > 0), rr / np.where(dHd > 0, dHd, 1.0), 0.0)
        x += a * d
        r -= a * Hd
        rr_new = dot(r, r)
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        d = r + beta * d
        rr = rr_new
        active = np.sqrt(rr) > thresh
        history.append(float(np.max(np.sqrt(rr) / np.maximum(1.0, ref))))
    return x, history, not np.any(active)


def best_response_batch(problem, W1, data=True, tol=None, max_iter=None, X0=None):
    """Nash responses for a batch of leader traces.  Returns ``(W2, history,
    converged)``."""
    tol = problem.tol if tol is None else tol
    max_iter = problem.max_iter if max_iter is None else max_iter
    g0 = gradient_batch(problem, W1, np.zeros_like(W1), data)[0]
    X0 = np.zeros_like(W1) if X0 is None else X0
    weights = problem.w2_weights
    ref = np.sqrt(np.sum(weights[:, None] * g0 * g0, axis=0))
    return cg_batch(lambda Z: normal_apply(problem, Z), -g0, X0, weights, tol, max_iter, ref)


# ----------------------------------------------------------------------
# public API


def eval_J2(problem: FollowerProblem, w1, w2) -> float:
    W1 = _trace_values(problem, w1, problem.partition.sigma1, "w1")
    W2 = _trace_values(problem, w2, problem.partition.sigma2, "w2")
    V = state_batch(problem, W1[:, None], W2[:, None])[..., 0]
    return _j2_from_state(problem, V, W2)


def _j2_from_state(problem, V, W2):
    R = V - problem.v2_target
    Mf = problem.metric.mass_full
    track = sum(
        tau * a * float(R[n] @ (Mf @ R[n]))
        for n, (tau, a) in enumerate(zip(problem.grid.time_weights, problem.alphas))
    )
    return 0.5 * track + 0.5 * problem.sigma * float(np.sum(problem.w2_weights * W2**2))


def grad_J2_w2(problem: FollowerProblem, w1, w2) -> ControlTrace:
    """Gradient of J2 in w2 w.r.t. the weighted L2(Sigma2) product:
    ``sigma w2 - flux(p)`` on Sigma2, ``p`` the adjoint state."""
    W1 = _trace_values(problem, w1, problem.partition.sigma1, "w1")
    W2 = _trace_values(problem, w2, problem.partition.sigma2, "w2")
    g = gradient_batch(problem, W1[:, None], W2[:, None])[0][:, 0]
    return ControlTrace.masked(g, problem.partition.sigma2)


def best_response(problem: FollowerProblem, w1, x0=None) -> NashResult:
    """Unique minimiser of J2(w1, .) with its state and adjoint state.

    Raises :class:`NonConvergence` if CG exhausts ``max_iter``.
    """
    W1 = _trace_values(problem, w1, problem.partition.sigma1, "w1")
    X0 = None
    if x0 is not None:
        X0 = _trace_values(problem, x0, problem.partition.sigma2, "x0")[:, None]
    W2, hist, ok = best_response_batch(problem, W1[:, None], X0=X0)
    if not ok:
        raise NonConvergence(
            f"follower CG did not reach tol={problem.tol} in {problem.max_iter} iterations", hist
        )
    w2 = problem.partition.sigma2 * W2[:, 0]
    g, V, Vbar = gradient_batch(problem, W1[:, None], w2[:, None])
    p = adjoint_field_batch(problem.grid, Vbar)[..., 0]
    weights = problem.w2_weights
    stats = {
        "iterations": len(hist) - 1,
        "history": hist,
        "grad_norm": float(np.sqrt(np.sum(weights * g[:, 0] ** 2))),
        "J2": _j2_from_state(problem, V[..., 0], w2),
    }
    return NashResult(
        ControlTrace.masked(w2, problem.partition.sigma2),
        Field(V[..., 0], problem.grid),
        Field(p, problem.grid, cotrace=Vbar[:, 0, 0].copy()),
        stats,
    )


@dataclass
class NashGapReport:
    min_gap: float
    gaps: list
    passed: bool
    threshold: float = -1e-10


def nash_gap_check(problem, w1, w2, trials=20, magnitude=0.1, rng=None, perturbations=None):
    """Sample ``J2(w1, w2 + d) - J2(w1, w2)`` over perturbations ``d`` on
    Sigma2 with weighted L2 norm ``magnitude``.  Explicit ``perturbations``
    must vanish off Sigma2."""
    mask = problem.partition.sigma2
    if perturbations is None:
        rng = np.random.default_rng(rng)
        weights = problem.w2_weights
        perturbations = []
        for _ in range(trials):
            d = rng.standard_normal(mask.size) * mask
            nrm = np.sqrt(np.sum(weights * d * d))
            perturbations.append(magnitude * d / nrm if nrm > 0 else d)
    else:
        perturbations = [_trace_values(problem, d, mask, "perturbation") for d in perturbations]
    W2 = _trace_values(problem, w2, mask, "w2")
    base = eval_J2(problem, w1, W2)
    gaps = [eval_J2(problem, w1, W2 + d) - base for d in perturbations]
    mg = min(gaps) if gaps else 0.0
    return NashGapReport(mg, gaps, mg >= -1e-10)
