import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackwave import ConfigError, DomainError, ShapeError
from stackwave.geometry import (
    SPEED_BOUND,
    MovingDomain,
    alpha,
    build_partition,
    coefficients,
    horizon_warning,
    pullback_initial,
    pushforward_state,
    validate_controllability_params,
)
from stackwave.spaces import GridSpec
from stackwave.wavesolver import Field


def test_alpha_values():
    assert alpha(MovingDomain(0.2, 4.0), 2.5) == pytest.approx(1.5)
    assert alpha(MovingDomain(0.37, 4.0), 0.0) == 1.0
    assert alpha(MovingDomain(0.1, 4.0), 1.0) == pytest.approx(1.1)


def test_alpha_out_of_range():
    with pytest.raises(DomainError):
        alpha(MovingDomain(0.2, 1.0), 1.5)
    with pytest.raises(DomainError):
        alpha(MovingDomain(0.2, 1.0), -0.1)


def test_coefficients():
    assert coefficients(MovingDomain(0.0, 2.0), 0.3, 1.7) == (1.0, 0.0)
    b, g = coefficients(MovingDomain(0.2, 2.0), 1.0, 0.0)
    assert b == pytest.approx(0.96) and g == pytest.approx(-0.4)
    b, g = coefficients(MovingDomain(0.3, 2.0), 0.5, 1.0)
    assert b == pytest.approx(0.9775 / 1.3) and g == pytest.approx(-0.3)
    with pytest.raises(DomainError):
        coefficients(MovingDomain(0.3, 2.0), 1.2, 1.0)


@pytest.mark.parametrize("k", [-0.1, 1.0, 1.5])
def test_bad_speed(k):
    with pytest.raises(ConfigError):
        MovingDomain(k, 1.0)


def test_bad_horizon():
    with pytest.raises(ConfigError):
        MovingDomain(0.1, 0.0)


def test_speed_bound():
    assert SPEED_BOUND == pytest.approx(1 - 1 / math.sqrt(math.e))
    assert validate_controllability_params(MovingDomain(0.3, 4.0)).speed_ok
    assert not validate_controllability_params(MovingDomain(0.5, 4.0)).speed_ok
    assert not validate_controllability_params(MovingDomain(SPEED_BOUND, 4.0)).speed_ok
    assert not validate_controllability_params(MovingDomain(0.0, 4.0)).speed_ok


def test_horizon_warning():
    rep = validate_controllability_params(MovingDomain(0.2, 1.0))
    assert rep.horizon_warning is not None
    assert validate_controllability_params(MovingDomain(0.2, 4.0)).horizon_warning is None
    with pytest.warns(UserWarning):
        horizon_warning(MovingDomain(0.2, 1.5))
    assert rep.as_dict()["k"] == 0.2


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.999), st.floats(0.1, 10.0))
def test_effective_speed_bounded(k, T):
    dom = MovingDomain(k, T)
    y, t = np.meshgrid(np.linspace(0, 1, 41), np.linspace(0, T, 41))
    beta, _ = coefficients(dom, y, t)
    a = alpha(dom, t)
    assert np.all(beta > 0)
    assert np.all(beta / a <= 1 + 1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_alpha_affine(k, t1, t2):
    dom = MovingDomain(k, 5.0)
    assert alpha(dom, 0.5 * (t1 + t2)) == pytest.approx(0.5 * (alpha(dom, t1) + alpha(dom, t2)), rel=1e-14)


def test_pullback():
    dom = MovingDomain(0.2, 1.0)
    y = np.linspace(0, 1, 101)
    z = np.zeros_like(y)
    v0, v1 = pullback_initial(z, z, dom)
    assert not v0.any() and not v1.any()
    u0, u1 = np.sin(np.pi * y), np.cos(y)
    v0, v1 = pullback_initial(u0, u1, MovingDomain(0.0, 1.0))
    np.testing.assert_array_equal(v0, u0)
    np.testing.assert_array_equal(v1, u1)


def test_pullback_derivative_second_order():
    dom = MovingDomain(0.2, 1.0)
    errs = []
    for n in (50, 100, 200):
        y = np.linspace(0, 1, n + 1)
        _, v1 = pullback_initial(np.sin(np.pi * y), np.zeros_like(y), dom)
        errs.append(np.max(np.abs(v1 - 0.2 * y * np.pi * np.cos(np.pi * y))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
    assert errs[1] < 10 * (1 / 100) ** 2


def test_pullback_shape_errors():
    dom = MovingDomain(0.2, 1.0)
    with pytest.raises(ShapeError):
        pullback_initial(np.zeros(5), np.zeros(6), dom)
    with pytest.raises(ShapeError):
        pullback_initial(np.zeros(5), np.zeros(5), dom, dy=0.1)


def test_pushforward():
    grid = GridSpec.from_cfl(10, 1.0)
    dom = MovingDomain(0.3, 1.0)
    x, u = pushforward_state(Field(np.zeros(grid.shape), grid), dom)
    assert not u.any()
    assert x[-1, -1] == pytest.approx(1.3)
    vals = np.random.default_rng(0).standard_normal(grid.shape)
    x, u = pushforward_state(Field(vals, grid), MovingDomain(0.0, 1.0))
    np.testing.assert_array_equal(u, vals)
    np.testing.assert_allclose(x, np.broadcast_to(grid.y, grid.shape))
    const = np.full(grid.shape, 2.5)
    _, u = pushforward_state(Field(const, grid), dom, x=np.linspace(0, 1, 7))
    np.testing.assert_allclose(u, 2.5)


def test_pushforward_pullback_roundtrip():
    grid = GridSpec.from_cfl(20, 1.0)
    dom = MovingDomain(0.25, 1.0)
    u0 = np.sin(np.pi * grid.y) + grid.y * (1 - grid.y)
    v0, _ = pullback_initial(u0, np.zeros_like(u0), dom)
    vals = np.zeros(grid.shape)
    vals[0] = v0
    _, u = pushforward_state(Field(vals, grid), dom, x=grid.y)
    np.testing.assert_allclose(u[0], u0, atol=1e-15)


def test_partition_overlap():
    p = build_partition("overlap", 4.0, nt=40)
    assert p.sigma1.all() and p.sigma2.all()
    with pytest.raises(ValueError):
        p.sigma1[0] = False


def test_partition_split():
    grid = GridSpec(5, 40, 4.0)
    p = build_partition("split", 4.0, 2.0, grid=grid)
    t = grid.t
    assert np.all(p.sigma1 == (t <= 2.0 + 1e-12))
    assert not np.any(p.sigma1 & p.sigma2)
    assert np.all(p.sigma1 | p.sigma2)
    # the step containing a non-node split time goes to the leader
    p = build_partition("split", 4.0, 2.05, grid=grid)
    assert p.sigma1[21] and not p.sigma1[22]


@pytest.mark.parametrize("split", [5.0, 0.0, 4.0, None])
def test_partition_bad_split(split):
    with pytest.raises(ConfigError):
        build_partition("split", 4.0, split, nt=40)


def test_partition_bad_mode():
    with pytest.raises(ConfigError):
        build_partition("diagonal", 4.0, nt=10)
