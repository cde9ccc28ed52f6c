"""Moving-domain geometry.

The physical domain is ``0 < x < alpha(t) = 1 + k t``.  With ``y = x / alpha(t)``
it is mapped onto the cylinder ``(0, 1) x (0, T)`` where the state obeys
``v'' + L v = f`` with

    L v = -[(beta / alpha) v_y]_y + (gamma / alpha) v'_y,
    beta(y, t) = (1 - k^2 y^2) / alpha(t),   gamma(y) = -2 k y.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

#: Upper bound on the endpoint speed for which approximate controllability
#: is established: 1 - 1/sqrt(e).
SPEED_BOUND = 1.0 - math.exp(-0.5)

#: Heuristic horizon below which a warning is issued (round trip of a
#: unit-speed wave on the reference interval).
HORIZON_HINT = 2.0

_EPS = 1e-12


@dataclass(frozen=True)
class MovingDomain:
    """Boundary speed ``k`` and horizon ``T``.

    ``k = 0`` is accepted and gives the fixed (cylindrical) string; it is
    used for the closed-form reference solutions.
    """

    k: float
    T: float

    def __post_init__(self):
        if not (0.0 <= self.k < 1.0):
            raise ConfigError(f"boundary speed k={self.k} must satisfy 0 <= k < 1", key="k")
        if not self.T > 0.0:
            raise ConfigError(f"horizon T={self.T} must be positive", key="T")

    @property
    def oracle_mode(self) -> bool:
        return self.k == 0.0

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -_EPS * max(1.0, self.T)) or np.any(t > self.T * (1 + _EPS) + _EPS):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    def _check_y(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < -_EPS) or np.any(y > 1 + _EPS):
            raise DomainError("y outside [0, 1]")
        return y


def alpha(domain: MovingDomain, t):
    """Length of the physical interval at time ``t``: ``1 + k t``."""
    t = domain._check_t(t)
    out = 1.0 + domain.k * t
    return float(out) if out.ndim == 0 else out


def coefficients(domain: MovingDomain, y, t):
    """Return ``(beta, gamma)`` at ``(y, t)`` (broadcasting)."""
    y = domain._check_y(y)
    t = domain._check_t(t)
    k = domain.k
    beta = (1.0 - k * k * y * y) / (1.0 + k * t)
    gamma = -2.0 * k * y * np.ones_like(beta)
    if beta.ndim == 0:
        return float(beta), float(gamma)
    return beta, gamma


@dataclass(frozen=True)
class ControllabilityReport:
    k: float
    T: float
    speed_ok: bool
    speed_bound: float
    horizon_warning: str | None

    def as_dict(self):
        return {
            "k": self.k,
            "T": self.T,
            "speed_ok": self.speed_ok,
            "speed_bound": self.speed_bound,
            "horizon_warning": self.horizon_warning,
        }


def validate_controllability_params(domain: MovingDomain) -> ControllabilityReport:
    """Check ``0 < k < 1 - 1/sqrt(e)`` and note short horizons.

    The minimal horizon for the density result is not computed here; only a
    warning is recorded when ``T`` is below the cylinder round-trip time.
    """
    speed_ok = 0.0 < domain.k < SPEED_BOUND
    note = None
    if domain.T < HORIZON_HINT:
        note = (
            f"T={domain.T} is below {HORIZON_HINT} (cylinder round-trip time); "
            "the terminal state may not be approximately reachable"
        )
    return ControllabilityReport(domain.k, domain.T, speed_ok, SPEED_BOUND, note)


def speed_refusal_message(domain: MovingDomain) -> str:
    return (
        f"boundary speed k={domain.k} violates 0 < k < 1 - 1/sqrt(e) = {SPEED_BOUND:.7f}; "
        "set leader.override_speed_check=true to run anyway"
    )


def pullback_initial(u0, u1, domain: MovingDomain, dy: float | None = None):
    """Initial data of the cylinder problem from physical initial data.

    ``v0 = u0`` and ``v1 = u1 + k y u0'`` (at ``t = 0`` the two coordinate
    systems coincide).  ``u0'`` uses second-order differences, one-sided at
    the endpoints.
    """
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if u0.shape != u1.shape or u0.ndim != 1 or u0.size < 3:
        raise ShapeError(f"u0 {u0.shape} and u1 {u1.shape} must be equal 1-D grids")
    n = u0.size - 1
    if dy is None:
        dy = 1.0 / n
    elif abs(dy * n - 1.0) > 1e-9:
        raise ShapeError(f"grid of {u0.size} nodes does not match dy={dy}")
    y = np.linspace(0.0, 1.0, n + 1)
    du0 = np.gradient(u0, dy, edge_order=2)
    return u0.copy(), u1 + domain.k * y * du0


def pushforward_state(field, domain: MovingDomain, x=None):
    """Express a cylinder field in physical coordinates.

    Without ``x`` the result lives on the moving grid ``x_j = j dy alpha(t_n)``
    and ``(x, u)`` is returned, both of shape ``(Nt+1, Ny+1)``.  With ``x``
    (a 1-D array of physical abscissae) the field is linearly interpolated at
    ``y = x / alpha(t_n)``; points beyond the moving end are set to 0.
    """
    values = np.asarray(field.values, dtype=float)
    grid = field.grid
    t = grid.t
    a = alpha(domain, t)
    if x is None:
        xs = np.outer(a, grid.y)
        return xs, values.copy()
    x = np.asarray(x, dtype=float)
    out = np.empty((t.size, x.size))
    for n in range(t.size):
        out[n] = np.interp(x / a[n], grid.y, values[n], left=np.nan, right=0.0)
    return np.broadcast_to(x, out.shape).copy(), out


@dataclass(frozen=True)
class BoundaryPartition:
    """Membership of each time node in the leader (``sigma1``) and follower
    (``sigma2``) parts of the controlled boundary ``y = 0``."""

    mode: str
    sigma1: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    split_time: float | None = None

    def __post_init__(self):
        self.sigma1.setflags(write=False)
        self.sigma2.setflags(write=False)


def build_partition(mode: str, T: float, split_time: float | None = None, grid=None, nt: int | None = None):
    """Per-node masks for the two controls.

    ``overlap``: both controls act on the whole boundary and superpose.
    ``split``: nodes with ``t_n`` in the time step containing ``split_time``
    or earlier belong to the leader, the rest to the follower.
    """
    mode = str(mode).lower()
    if grid is not None:
        nt = grid.nt
        if abs(grid.T - T) > 1e-12 * max(1.0, T):
            raise ConfigError(f"partition horizon {T} != grid horizon {grid.T}", key="T")
    if nt is None:
        raise ConfigError("build_partition needs a grid or a step count")
    if mode == "overlap":
        full = np.ones(nt + 1, dtype=bool)
        return BoundaryPartition("overlap", full, full.copy())
    if mode != "split":
        raise ConfigError(f"unknown partition mode {mode!r}", key="partition.mode")
    if split_time is None or not (0.0 < split_time < T):
        raise ConfigError(
            f"split_time={split_time} must lie strictly inside (0, {T})", key="partition.split_time"
        )
    dt = T / nt
    n_split = math.ceil(split_time / dt - 1e-9)
    idx = np.arange(nt + 1)
    s1 = idx <= n_split
    if s1.all():
        raise ConfigError("split leaves no follower nodes; refine the grid", key="partition.split_time")
    return BoundaryPartition("split", s1, ~s1, float(split_time))


def horizon_warning(domain: MovingDomain):
    rep = validate_controllability_params(domain)
    if rep.horizon_warning:
        warnings.warn(rep.horizon_warning, stacklevel=2)
    return rep
