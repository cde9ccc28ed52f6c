"""Uniform space-time grid and the discrete L2 / H^1_0 / H^-1 structure.

All spatial norms come from piecewise-linear finite elements on the uniform
grid ``y_j = j dy``: ``M = dy tridiag(1/6, 2/3, 1/6)`` and
``K = (1/dy) tridiag(-1, 2, -1)`` on the interior nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class GridSpec:
    ny: int
    nt: int
    T: float
    cfl: float = 0.8

    def __post_init__(self):
        if self.ny < 3:
            raise ConfigError(f"grid.ny={self.ny} must be >= 3", key="grid.ny")
        if self.nt < 2:
            raise ConfigError(f"nt={self.nt} must be >= 2")
        if not (0.0 < self.cfl < 1.0):
            raise ConfigError(f"grid.cfl={self.cfl} must lie in (0, 1)", key="grid.cfl")
        if not self.T > 0:
            raise ConfigError(f"T={self.T} must be positive", key="T")
        if self.dt > self.cfl * self.dy * (1 + 1e-12):
            raise ConfigError(
                f"CFL violated: dt={self.dt:.6g} > cfl*dy={self.cfl * self.dy:.6g}", key="grid.cfl"
            )

    @classmethod
    def from_cfl(cls, ny: int, T: float, cfl: float = 0.8) -> "GridSpec":
        """Smallest step count with ``dt <= cfl * dy``."""
        if ny < 3:
            raise ConfigError(f"grid.ny={ny} must be >= 3", key="grid.ny")
        nt = max(2, math.ceil(T * ny / cfl - 1e-9))
        return cls(ny, nt, float(T), cfl)

    @property
    def dy(self) -> float:
        return 1.0 / self.ny

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ny + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def time_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the time nodes."""
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @property
    def shape(self):
        return (self.nt + 1, self.ny + 1)


def _tridiag_banded(n, diag, off):
    ab = np.zeros((2, n))
    ab[0, 1:] = off
    ab[1, :] = diag
    return ab


@dataclass(frozen=True)
class SpatialMetric:
    """Mass and stiffness matrices on the interior nodes.

    ``mass_full`` is the P1 mass matrix over all ``ny + 1`` nodes; it is used
    for space-time integrals of fields that do not vanish at ``y = 0``.
    """

    grid: GridSpec
    mass: sparse.csr_matrix = field(repr=False)
    stiffness: sparse.csr_matrix = field(repr=False)
    mass_full: sparse.csr_matrix = field(repr=False)
    _mass_chol: np.ndarray = field(repr=False)
    _stiff_chol: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.ny - 1

    def solve_mass(self, g):
        return linalg.cho_solve_banded((self._mass_chol, False), g)

    def solve_stiffness(self, g):
        return linalg.cho_solve_banded((self._stiff_chol, False), g)

    def interior(self, f):
        """Interior samples of a full-length grid function (pass-through for
        arrays that already have interior length)."""
        f = np.asarray(f, dtype=float)
        if f.shape[0] == self.grid.ny + 1:
            return f[1:-1]
        if f.shape[0] == self.n:
            return f
        raise ShapeError(f"grid function of length {f.shape[0]} does not fit ny={self.grid.ny}")

    def pad(self, f):
        f = np.asarray(f, dtype=float)
        out = np.zeros((self.grid.ny + 1,) + f.shape[1:])
        out[1:-1] = f
        return out

    def l2_inner(self, f, g):
        return float(self.interior(f) @ (self.mass @ self.interior(g)))

    def h10_inner(self, f, g):
        return float(self.interior(f) @ (self.stiffness @ self.interior(g)))


def build_metric(grid: GridSpec) -> SpatialMetric:
    if grid.ny < 3:
        raise ConfigError(f"grid.ny={grid.ny} must be >= 3", key="grid.ny")
    n = grid.ny - 1
    h = grid.dy
    mass = sparse.diags([h / 6, 2 * h / 3, h / 6], [-1, 0, 1], shape=(n, n), format="csr")
    stiff = sparse.diags([-1 / h, 2 / h, -1 / h], [-1, 0, 1], shape=(n, n), format="csr")
    d = np.full(grid.ny + 1, 2 * h / 3)
    d[0] = d[-1] = h / 3
    mass_full = sparse.diags(
        [np.full(grid.ny, h / 6), d, np.full(grid.ny, h / 6)], [-1, 0, 1], format="csr"
    )
    mchol = linalg.cholesky_banded(_tridiag_banded(n, 2 * h / 3, h / 6))
    kchol = linalg.cholesky_banded(_tridiag_banded(n, 2 / h, -1 / h))
    return SpatialMetric(grid, mass, stiff, mass_full, mchol, kchol)


SPACES = ("L2", "H10", "Hm1")


def norm(metric: SpatialMetric, space: str, f) -> float:
    """Discrete norm of a grid function.

    ``f`` may be given on all nodes or on the interior only.  In ``H10`` a
    full-length ``f`` must vanish at both ends (up to round-off).
    """
    f = np.asarray(f, dtype=float)
    if space == "H10":
        if f.shape[0] == metric.grid.ny + 1:
            scale = max(1.0, float(np.max(np.abs(f), initial=0.0)))
            if max(abs(f[0]), abs(f[-1])) > 1e-12 * scale:
                raise ContractError("H10 norm requires zero boundary values")
        fi = metric.interior(f)
        return math.sqrt(max(float(fi @ (metric.stiffness @ fi)), 0.0))
    fi = metric.interior(f)
    if space == "L2":
        return math.sqrt(max(float(fi @ (metric.mass @ fi)), 0.0))
    if space == "Hm1":
        mf = metric.mass @ fi
        return math.sqrt(max(float(mf @ metric.solve_stiffness(mf)), 0.0))
    raise ConfigError(f"unknown space {space!r}; expected one of {SPACES}")


def riesz(metric: SpatialMetric, g):
    """H^-1 -> H^1_0 Riesz map ``r = K^-1 M g``.

    Then ``<g, h>`` (duality pairing, realised as ``g^T M h``) equals
    ``r^T K h`` for every ``h``.  The output has the same length convention as
    the input; full-length output has zero boundary values.
    """
    g = np.asarray(g, dtype=float)
    r = metric.solve_stiffness(metric.mass @ metric.interior(g))
    if g.shape[0] == metric.grid.ny + 1:
        return metric.pad(r)
    return r
