import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stackwave import ConfigError, ContractError
from stackwave.spaces import GridSpec, build_metric, norm, riesz

from conftest import golden


def metric(ny=100):
    return build_metric(GridSpec.from_cfl(ny, 1.0))


def test_gridspec():
    g = GridSpec.from_cfl(100, 4.0)
    assert g.nt * g.dt == pytest.approx(4.0)
    assert g.dt <= 0.8 * g.dy
    assert g.time_weights.sum() == pytest.approx(4.0)
    assert g.shape == (g.nt + 1, 101)
    with pytest.raises(ConfigError):
        GridSpec(10, 5, 4.0)
    with pytest.raises(ConfigError):
        GridSpec(2, 50, 1.0)
    with pytest.raises(ConfigError):
        GridSpec(10, 50, 1.0, cfl=1.2)


def test_small_grid_refused():
    with pytest.raises(ConfigError):
        GridSpec.from_cfl(2, 1.0)


def test_matrices():
    m = build_metric(GridSpec.from_cfl(4, 1.0))
    assert np.allclose(m.stiffness.diagonal(), 8.0)
    m = metric(20)
    rows = np.asarray(m.mass.sum(axis=1)).ravel()
    assert np.allclose(rows[1:-1], 1 / 20)
    for A in (m.mass, m.stiffness):
        d = A.toarray()
        assert np.allclose(d, d.T)
        np.linalg.cholesky(d)


def test_eigen_relation():
    m = metric(100)
    s = np.sin(np.pi * m.grid.y[1:-1])
    lhs = m.stiffness @ s
    rhs = np.pi**2 * (m.mass @ s)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 10 * m.grid.dy**2


def test_norms_sine():
    m = metric(100)
    s = np.sin(np.pi * m.grid.y)
    h2 = 10 * m.grid.dy**2
    assert norm(m, "L2", s) ** 2 == pytest.approx(0.5, rel=h2)
    assert norm(m, "H10", s) ** 2 == pytest.approx(np.pi**2 / 2, rel=h2)
    assert norm(m, "Hm1", s) ** 2 == pytest.approx(1 / (2 * np.pi**2), rel=h2)
    ref = golden("norms_sine_ny100")
    got = [norm(m, sp, s) ** 2 for sp in ("L2", "H10", "Hm1")]
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_norm_zero_and_scaling():
    m = metric(30)
    f = np.random.default_rng(1).standard_normal(31)
    f[0] = f[-1] = 0
    for sp in ("L2", "H10", "Hm1"):
        assert norm(m, sp, np.zeros(31)) == 0
        assert norm(m, sp, -3 * f) == pytest.approx(3 * norm(m, sp, f), rel=1e-13)


def test_h10_requires_zero_ends():
    m = metric(10)
    with pytest.raises(ContractError):
        norm(m, "H10", np.ones(11))
    with pytest.raises(ConfigError):
        norm(m, "H2", np.zeros(11))


def test_riesz():
    m = metric(100)
    assert not riesz(m, np.zeros(101)).any()
    s = np.sin(np.pi * m.grid.y)
    r = riesz(m, s)
    assert r.shape == (101,) and r[0] == r[-1] == 0
    assert np.max(np.abs(r - s / np.pi**2)) < 10 * m.grid.dy**2
    np.testing.assert_allclose(r, np.concatenate([[0], golden("riesz_sine_ny100"), [0]]), atol=1e-14)
    g = np.random.default_rng(3).standard_normal(99)
    assert norm(m, "Hm1", g) ** 2 == pytest.approx(g @ (m.mass @ riesz(m, g)), rel=1e-12)


def test_riesz_pairing():
    m = metric(40)
    rng = np.random.default_rng(5)
    for _ in range(10):
        g, h = rng.standard_normal((2, 39))
        assert g @ (m.mass @ h) == pytest.approx(h @ (m.mass @ g), rel=1e-12)
        assert riesz(m, g) @ (m.stiffness @ h) == pytest.approx(g @ (m.mass @ h), rel=1e-10, abs=1e-14)


# magnitudes below 1e-100 would underflow when squared
vec = arrays(np.float64, 19, elements=st.floats(-1e3, 1e3).filter(lambda x: x == 0 or abs(x) > 1e-100))


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_cauchy_schwarz(f, g):
    m = metric(20)
    assert abs(f @ (m.mass @ g)) <= norm(m, "L2", f) * norm(m, "L2", g) * (1 + 1e-12) + 1e-300


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_duality_bound(g, h):
    m = metric(20)
    assert g @ (m.mass @ h) <= norm(m, "Hm1", g) * norm(m, "H10", h) * (1 + 1e-12) + 1e-9


@settings(max_examples=50, deadline=None)
@given(vec)
def test_stiffness_solve_roundtrip(f):
    m = metric(20)
    back = m.stiffness @ m.solve_stiffness(f)
    assert np.linalg.norm(back - f) <= 1e-12 * max(np.linalg.norm(f), 1e-300) + 1e-300
