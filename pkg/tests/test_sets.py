import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import minimize

from movingqvi.exceptions import DimensionError, InfeasibleError, InvalidMultiplier
from movingqvi.sets import (
    FREE,
    NONNEG,
    NONPOS,
    ZERO,
    Ball,
    BiactiveWarning,
    Box,
    CoordCone,
    Span,
    Translate,
    WholeSpace,
    contains,
    critical_cone,
    in_cone,
    in_polar,
    project,
)
from movingqvi.space import Space, stiffness_space

from conftest import random_spd


def test_project_clamp():
    p = project(Space(dim=2), Box([0, 0], [np.inf, np.inf]), np.array([-1.0, 2.0]))
    assert_allclose(p, [0, 2])


def test_project_general_gram_kkt():
    space = Space(np.array([[2.0, 1.0], [1.0, 2.0]]))
    p = project(space, Box([-np.inf, -np.inf], [0, 0]), np.array([1.0, -1.0]))
    assert_allclose(p, [0, -0.5], atol=1e-14)
    # multiplier of the active first coordinate
    eta = space.apply(np.array([1.0, -1.0]) - p)
    assert_allclose(eta, [1.5, 0.0], atol=1e-14)


def test_project_span_axis():
    assert_allclose(project(Space(dim=2), Span([[1.0, 0.0]]), np.array([3.0, 7.0])), [3, 0])


def test_project_span_general_gram(rng):
    space = Space(random_spd(rng, 4))
    basis = rng.standard_normal((2, 4))
    x = rng.standard_normal(4)
    p = project(space, Span(basis), x)
    # residual is M-orthogonal to the span
    assert_allclose(basis @ space.apply(x - p), 0, atol=1e-12)


def test_project_ball():
    space = Space(np.diag([4.0, 1.0]))
    ball = Ball(np.zeros(2), 1.0)
    assert_allclose(project(space, ball, np.array([1.0, 0.0])), [0.5, 0.0])
    assert_allclose(project(space, ball, np.array([0.1, 0.2])), [0.1, 0.2])


def test_project_matches_bound_constrained_oracle(rng):
    for _ in range(5):
        M = random_spd(rng, 5, cond=30)
        space = Space(M)
        box = Box(-rng.uniform(0, 1, 5), rng.uniform(0, 1, 5))
        x = 3 * rng.standard_normal(5)
        p = project(space, box, x)
        res = minimize(
            lambda q: 0.5 * (q - x) @ M @ (q - x),
            np.clip(x, box.lower, box.upper),
            jac=lambda q: M @ (q - x),
            bounds=list(zip(box.lower, box.upper)),
            method="L-BFGS-B",
            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000},
        )
        assert_allclose(p, res.x, atol=1e-6)


def test_projection_variational_inequality_on_vertices(rng):
    for _ in range(10):
        space = Space(random_spd(rng, 3, cond=50))
        box = Box(-rng.uniform(0.1, 1, 3), rng.uniform(0.1, 1, 3))
        x = 4 * rng.standard_normal(3)
        p = project(space, box, x)
        assert contains(space, box, p, tol=1e-12)
        for corner in itertools.product(*zip(box.lower, box.upper)):
            assert space.inner(p - x, np.array(corner) - p) >= -1e-12
        assert_allclose(project(space, box, p), p, atol=1e-14)


def test_projection_stiffness_gram():
    n = 63
    space = stiffness_space(n)
    x = np.sin(np.linspace(0, 6, n)) + 0.3
    box = Box.uniform(n, upper=0.5)
    p = project(space, box, x)
    assert np.all(p <= 0.5 + 1e-14)
    mult = space.apply(x - p)
    free = p < 0.5 - 1e-12
    assert_allclose(mult[free], 0, atol=1e-12)
    assert np.all(mult >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_is_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    space = Space(random_spd(rng, 4, cond=20))
    box = Box(-rng.uniform(0, 1, 4), rng.uniform(0, 1, 4))
    x, y = 3 * rng.standard_normal((2, 4))
    d = space.norm(project(space, box, x) - project(space, box, y))
    assert d <= space.norm(x - y) * (1 + 1e-10) + 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translate_identity(seed):
    rng = np.random.default_rng(seed)
    space = Space(random_spd(rng, 4, cond=20))
    box = Box.uniform(4, lower=0.0)
    c, x = rng.standard_normal((2, 4))
    lhs = project(space, Translate(box, c), x)
    rhs = project(space, box, x - c) + c
    assert_allclose(lhs, rhs, atol=1e-12)


def test_empty_box_and_shape_errors():
    with pytest.raises(InfeasibleError):
        Box([1.0], [0.0])
    with pytest.raises(DimensionError):
        Box([0.0, 0.0], [1.0])
    with pytest.raises(DimensionError):
        project(Space(dim=3), Box.uniform(2, 0.0, 1.0), np.zeros(3))


def test_critical_cone_strongly_active():
    cone = critical_cone(Space(dim=2), Box.uniform(2, lower=0.0), np.array([0.0, 2.0]), np.array([-3.0, 0.0]))
    assert cone.status == (ZERO, FREE)
    assert cone.strongly_active == (0,)
    assert cone.biactive == ()


def test_critical_cone_biactive_warns():
    with pytest.warns(BiactiveWarning):
        cone = critical_cone(Space(dim=2), Box.uniform(2, lower=0.0), np.array([0.0, 2.0]), np.zeros(2))
    assert cone.status == (NONNEG, FREE)
    assert cone.biactive == (0,)


def test_critical_cone_whole_space():
    cone = critical_cone(Space(dim=3), WholeSpace(), np.array([1.0, -2.0, 0.0]), np.zeros(3))
    assert cone.status == (FREE, FREE, FREE)


def test_critical_cone_errors():
    space = Space(dim=2)
    box = Box.uniform(2, lower=0.0)
    with pytest.raises(InfeasibleError):
        critical_cone(space, box, np.array([-1.0, 1.0]), np.zeros(2))
    with pytest.raises(InvalidMultiplier):
        critical_cone(space, box, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    with pytest.raises(InvalidMultiplier):
        critical_cone(space, box, np.array([1.0, 1.0]), np.array([0.0, 1.0]))


def test_zero_lambda_gives_tangent_cone(quiet_biactive):
    space = Space(dim=3)
    box = Box([0.0, 0.0, -1.0], [1.0, np.inf, 1.0])
    cone = critical_cone(space, box, np.array([0.0, 3.0, 1.0]), np.zeros(3))
    assert cone.status == (NONNEG, FREE, NONPOS)
    assert in_cone(cone, np.zeros(3))


def test_in_polar_examples():
    space = Space(dim=2)
    cone = CoordCone((ZERO, FREE))
    assert in_polar(space, cone, np.array([5.0, 0.0]))
    assert not in_polar(space, cone, np.array([5.0, 1.0]))
    assert in_polar(space, CoordCone((NONNEG, NONPOS)), np.array([-2.0, 3.0]))
    assert not in_polar(space, CoordCone((NONNEG, NONPOS)), np.array([2.0, 3.0]))


def test_in_polar_absolute_scale():
    cone = CoordCone((FREE,))
    g = np.array([1e-12])
    # relative to |g| the functional is not zero; relative to the problem it is
    assert not in_polar(Space(dim=1), cone, g, tol=1e-8)
    assert in_polar(Space(dim=1), cone, g, tol=1e-8, scale=1.0)


def test_unknown_cone_status():
    with pytest.raises(ValueError):
        CoordCone(("sideways",))


@pytest.mark.parametrize("seed", range(20))
def test_polyhedricity_by_enumeration(seed, quiet_biactive):
    """Critical cone equals {v in T_K(z) : <lam, v> = 0} for boxes, dims <= 4."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    space = Space(dim=n)
    lower, upper = -np.ones(n), np.ones(n)
    kind = rng.integers(0, 5, n)  # lower strong/weak, upper strong/weak, inactive
    z = np.where(kind < 2, -1.0, np.where(kind < 4, 1.0, 0.3))
    lam = np.select([kind == 0, kind == 2], [-rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n)], 0.0)
    cone = critical_cone(space, Box(lower, upper), z, lam)
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=n):
        v = np.array(signs)
        tangent = np.all(v[kind < 2] >= 0) and np.all(v[(kind >= 2) & (kind < 4)] <= 0)
        expected = bool(tangent and lam @ v == 0)
        assert in_cone(cone, v) == expected
