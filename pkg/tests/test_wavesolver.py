import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackwave import ContractError, InstabilityError, ShapeError
from stackwave.geometry import MovingDomain
from stackwave.oracle import dalembert_reference
from stackwave.spaces import GridSpec
from stackwave.wavesolver import (
    ControlTrace,
    Field,
    TerminalState,
    boundary_flux,
    discrete_energy,
    metric_for,
    solve_backward_transpose,
    solve_forward,
    terminal_state,
)


def setup(ny=50, T=1.0, k=0.2):
    return GridSpec.from_cfl(ny, T), MovingDomain(k, T)


def test_zero_everything():
    g, d = setup()
    assert not solve_forward(g, d).values.any()
    p = solve_backward_transpose(g, d)
    assert not p.values.any()
    assert not boundary_flux(p, d).values.any()
    assert not boundary_flux(Field.zeros(g), d, "onesided").values.any()
    ts = terminal_state(Field.zeros(g))
    assert not ts.vT.any() and not ts.vTprime.any()


def test_dalembert_probe():
    T = 0.75
    g, d = setup(100, T, 0.0)
    w = lambda s: np.sin(np.pi * s)  # noqa: E731
    v = solve_forward(g, d, boundary=w(g.t))
    j = 25
    n = int(np.argmin(np.abs(g.t - 0.5)))
    exact = dalembert_reference(w, 0.25, g.t[n])
    assert dalembert_reference(w, 0.25, 0.5) == pytest.approx(math.sqrt(0.5), abs=1e-15)
    assert abs(v.values[n, j] - exact) < 2e-3


def test_standing_wave():
    errs = []
    for ny in (50, 100):
        g, d = setup(ny, 1.0, 0.0)
        v = solve_forward(g, d, init=(np.sin(np.pi * g.y), np.zeros(ny + 1)))
        exact = np.outer(np.cos(np.pi * g.t), np.sin(np.pi * g.y))
        errs.append(np.max(np.abs(v.values - exact)))
    assert errs[1] < 10 * (1 / 100) ** 2
    assert 1.7 <= math.log2(errs[0] / errs[1]) <= 2.3


def test_terminal_state_linear_in_time():
    g = GridSpec.from_cfl(20, 2.0)
    vals = np.outer(g.t, np.sin(np.pi * g.y))
    ts = terminal_state(Field(vals, g))
    np.testing.assert_allclose(ts.vT, 2.0 * np.sin(np.pi * g.y[1:-1]), atol=1e-14)
    np.testing.assert_allclose(ts.vTprime, np.sin(np.pi * g.y[1:-1]), atol=1e-12)


def test_terminal_velocity_standing_wave():
    T = 0.8
    g, d = setup(100, T, 0.0)
    v = solve_forward(g, d, init=(np.sin(np.pi * g.y), np.zeros(101)))
    ts = terminal_state(v)
    exact = -np.pi * np.sin(np.pi * T) * np.sin(np.pi * g.y[1:-1])
    assert np.max(np.abs(ts.vTprime - exact)) < 5 * g.dt


def _duality_sides(g, d, b, s):
    m = metric_for(g)
    v = solve_forward(g, d, boundary=b).values
    tau = g.time_weights
    lhs = sum(tau[n] * v[n] @ (m.mass_full @ s[n]) for n in range(g.nt + 1))
    p = solve_backward_transpose(g, d, source=s)
    rhs = -np.sum(tau * b * boundary_flux(p, d).values)
    return lhs, rhs


def test_duality_identity():
    g, d = setup(100, 1.0, 0.2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        b = rng.standard_normal(g.nt + 1)
        s = rng.standard_normal(g.shape)
        lhs, rhs = _duality_sides(g, d, b, s)
        assert abs(lhs - rhs) <= 1e-11 * abs(lhs)


def test_adjoint_matches_backward_leapfrog():
    """k=0, source sin(pi y): normalised transpose field vs a plain backward
    leapfrog for p_tt = p_yy + s with zero terminal data."""
    errs = []
    for ny in (50, 100):
        g, d = setup(ny, 1.0, 0.0)
        s = np.broadcast_to(np.sin(np.pi * g.y), g.shape).copy()
        p = solve_backward_transpose(g, d, source=s).values
        q = np.zeros(g.shape)
        r = (g.dt / g.dy) ** 2
        q[-2, 1:-1] = 0.5 * g.dt**2 * s[-1, 1:-1]
        for n in range(g.nt - 1, 0, -1):
            lap = np.zeros(ny + 1)
            lap[1:-1] = q[n, 2:] - 2 * q[n, 1:-1] + q[n, :-2]
            q[n - 1] = 2 * q[n] - q[n + 1] + r * lap + g.dt**2 * s[n]
            q[n - 1, [0, -1]] = 0
        errs.append(np.max(np.abs(p - q)))
    assert errs[1] < 10 * (1 / 100) ** 2
    assert errs[0] / errs[1] > 3.5


def test_onesided_flux_polynomial():
    # p = (1 - y) t: p_y = -t; the outward normal at y = 0 is -y, so the
    # scaled outward flux is +t (see the sign convention in the README)
    g = GridSpec.from_cfl(10, 1.0)
    vals = np.outer(g.t, 1 - g.y)
    fl = boundary_flux(Field(vals, g), MovingDomain(0.0, 1.0), "onesided").values
    np.testing.assert_allclose(fl, g.t, atol=1e-13)
    fl = boundary_flux(Field(vals, g), MovingDomain(0.5, 1.0), "onesided").values
    np.testing.assert_allclose(fl, g.t / (1 + 0.5 * g.t) ** 2, atol=1e-13)


def test_transpose_vs_onesided_refinement():
    gaps = []
    for ny in (25, 50, 100):
        g, d = setup(ny, 1.0, 0.2)
        yy, tt = np.meshgrid(g.y, g.t)
        p = solve_backward_transpose(g, d, source=np.sin(np.pi * yy) * (1 + tt))
        gaps.append(np.max(np.abs(boundary_flux(p, d).values - boundary_flux(p, d, "onesided").values)))
    assert gaps[0] / gaps[1] > 1.6 and gaps[1] / gaps[2] > 1.6


def test_transpose_flux_needs_cotrace():
    g, d = setup(10)
    with pytest.raises(ContractError):
        boundary_flux(Field.zeros(g), d)


def test_linearity():
    g, d = setup(40, 1.0, 0.2)
    rng = np.random.default_rng(1)
    b1, b2 = rng.standard_normal((2, g.nt + 1))
    s1, s2 = rng.standard_normal((2,) + g.shape)
    a = solve_forward(g, d, boundary=b1 + b2, source=s1 + s2).values
    b = solve_forward(g, d, boundary=b1, source=s1).values + solve_forward(g, d, boundary=b2, source=s2).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_energy_conservation_cylinder():
    g, d = setup(100, 4.0, 0.0)
    rng = np.random.default_rng(2)
    u0 = np.sin(np.pi * g.y) + 0.3 * np.sin(3 * np.pi * g.y)
    u1 = 0.5 * np.sin(2 * np.pi * g.y)
    E = discrete_energy(solve_forward(g, d, init=(u0, u1)))
    assert np.max(np.abs(E / E[0] - 1)) < 0.01


def test_moving_order_at_least_one():
    finals = {}
    for ny in (25, 50, 100, 400):
        g = GridSpec(ny, 2 * ny, 1.0, cfl=0.6)
        finals[ny] = solve_forward(g, MovingDomain(0.2, 1.0), boundary=np.sin(np.pi * g.t) ** 3).values[-1]
    ref = finals[400]
    e = [np.max(np.abs(finals[n] - ref[:: 400 // n])) for n in (25, 50, 100)]
    assert math.log2(e[0] / e[1]) >= 0.9 and math.log2(e[1] / e[2]) >= 0.9


def test_instability_detected():
    g, d = setup(10)
    with pytest.raises(InstabilityError):
        solve_forward(g, d, boundary=np.full(g.nt + 1, 1e200))


def test_grid_mismatch():
    g = GridSpec.from_cfl(10, 1.0)
    with pytest.raises(ContractError):
        solve_forward(g, MovingDomain(0.2, 2.0))
    with pytest.raises(ShapeError):
        solve_forward(g, MovingDomain(0.2, 1.0), boundary=np.zeros(3))
    with pytest.raises(ShapeError):
        Field(np.zeros((3, 3)), g)


def test_control_trace_contract():
    with pytest.raises(ContractError):
        ControlTrace(np.ones(4), np.array([True, True, False, False]))
    tr = ControlTrace.masked(np.ones(4), np.array([True, True, False, False]))
    assert tr.values.tolist() == [1, 1, 0, 0]
    g = GridSpec(3, 3, 0.5)
    assert tr.norm(g) == pytest.approx(math.sqrt(0.5 / 3 * 0.5 + 0.5 / 3))


def test_terminal_state_shapes():
    with pytest.raises(ShapeError):
        TerminalState(np.zeros(3), np.zeros(4))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.39), st.integers(0, 2**32 - 1))
def test_duality_property(k, seed):
    g, d = setup(20, 1.0, k)
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(g.nt + 1)
    s = rng.standard_normal(g.shape)
    lhs, rhs = _duality_sides(g, d, b, s)
    assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), 1e-12)
