import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from movingqvi.cases import (
    OBSTACLE_CONSTANT,
    case_moving_obstacle,
    case_obstacle_projection,
    case_sharp_general,
    case_sharp_symmetric,
    case_tightness,
    obstacle_closed_form,
    printed_symmetric_phi,
    sharp_general_data,
    sharp_symmetric_data,
    smoothing_matrix,
)
from movingqvi.exceptions import ConditionViolated
from movingqvi.operators import ZeroMap, check_uniqueness, operator_norm
from movingqvi.qvi_solver import solve_qvi
from movingqvi.space import grid_points, stiffness_space


def test_sharp_general_reference_values():
    rep = case_sharp_general(1.0, 2.0)
    assert rep.passed, rep.assertions
    q = rep.quantities
    assert_allclose(q["c_A"], math.sqrt(3), atol=1e-15)
    assert_allclose(q["z"], [0.75, -0.4330127], atol=1e-7)
    assert abs(q["z_dot_Ax"]) <= 1e-15
    assert any("non-coercive composed operator" in n for n in rep.notes)
    json.dumps(rep.to_dict())


@pytest.mark.parametrize("seed", range(20))
def test_sharp_cases_random_parameters(seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.1, 5)
    L = mu * rng.uniform(1.01, 10)
    assert case_sharp_general(mu, L).passed
    assert case_sharp_symmetric(mu, L).passed


@pytest.mark.parametrize("case", [case_sharp_general, case_sharp_symmetric])
def test_sharp_cases_reject_equal_constants(case):
    with pytest.raises(ValueError):
        case(1.0, 1.0)
    with pytest.raises(ValueError):
        case(2.0, 1.0)


def test_sharp_symmetric_reference_values():
    rep = case_sharp_symmetric(1.0, 2.0)
    assert rep.passed, rep.assertions
    q = rep.quantities
    assert_allclose(q["lip_phi"], 2 * math.sqrt(2) / 3, atol=1e-15)
    assert_allclose(q["x"], [0.8164966, 0.5773503], atol=1e-7)
    r2 = math.sqrt(2)
    assert_allclose(q["Phi"], [[4 / 9, 2 * r2 / 9], [4 * r2 / 9, 4 / 9]], atol=1e-15)
    assert abs(q["interpolation_slack"]) <= 1e-12


def test_printed_matrix_fails_off_unit_mu():
    # coincides with the rank-one matrix only when mu_A = 1
    assert_allclose(printed_symmetric_phi(1.0, 2.0), sharp_symmetric_data(1.0, 2.0)[1], atol=1e-15)
    rep = case_sharp_symmetric(2.0, 3.0)
    assert rep.passed
    assert rep.quantities["printed_passes"] is False
    printed = {a["name"]: a["passed"] for a in rep.quantities["printed_assertions"]}
    assert not printed["printed_xA(I-Phi)x"]


def test_symmetric_scaling_invariance():
    a1, p1, x1 = sharp_symmetric_data(1.0, 3.0)
    a2, p2, x2 = sharp_symmetric_data(5.0, 15.0)
    assert_allclose(x1, x2, atol=1e-15)
    assert_allclose(p1, p2, atol=1e-15)
    assert_allclose(a2, 5 * a1)


def test_general_phi_norm_and_rank():
    _, phi, _, _ = sharp_general_data(2.0, 7.0)
    assert np.linalg.matrix_rank(phi) == 1
    assert_allclose(np.linalg.norm(phi, 2), 2 / 7, atol=1e-15)


def test_tightness_symmetric():
    rep = case_tightness(1.0, 2.0, "symmetric", tol=1e-8)
    assert rep.passed, rep.assertions
    assert rep.quantities["formula_mu_B"] > 0
    with pytest.raises(ValueError):
        case_tightness(1.0, 2.0, "diagonal")


def test_obstacle_closed_form_properties():
    x = np.linspace(0, 1, 1001)
    y = obstacle_closed_form(x, 0.02)
    assert y[0] == 0 and abs(y[-1]) <= 1e-15
    assert_allclose(y, y[::-1], atol=1e-15)
    assert_allclose(y.max(), 0.02)
    # H1 seminorm^2 = 2 t^3 / 3
    t = 0.2
    dy = np.gradient(y, x)
    assert_allclose(np.trapezoid(dy**2, x), 2 * t**3 / 3, rtol=1e-3)


def test_obstacle_study_small():
    rep = case_obstacle_projection(1023, (0.005, 0.01, 0.02))
    rows = {r[0]: r for r in rep.tables["obstacle"]["rows"]}
    assert_allclose(rows[0.02][1], OBSTACLE_CONSTANT * 0.02**0.75, rtol=1e-4)
    assert_allclose(rows[0.02][1], 0.073031, atol=2e-6)
    assert max(r[3] for r in rows.values()) <= 1e-6
    assert rep.assertion("norm_y0")["passed"]
    assert rep.quantities["printed_right_branch_at_1"] != 0
    assert rep.quantities["reflected_right_branch_at_1"] == 0


def test_obstacle_study_full():
    rep = case_obstacle_projection()
    assert rep.passed, rep.assertions
    assert 0.74 <= rep.quantities["slope"] <= 0.76


def test_obstacle_study_input_errors():
    with pytest.raises(ValueError):
        case_obstacle_projection(511)
    with pytest.raises(ValueError):
        case_obstacle_projection(1023, (1e-6, 1e-2))
    with pytest.raises(ValueError):
        case_obstacle_projection(1023, (0.01, 0.2))


def test_moving_obstacle_construction():
    p = case_moving_obstacle(31, alpha=0.5)
    assert p.a_op.certificate.gamma == 1
    th = check_uniqueness(p.a_op.certificate, 0.0).thresholds
    assert th["nesterov_scrimali"] == th["convex_potential"] == 1.0
    h = 1 / 32
    # the smoothing is I - (h/4) M, so its M-norm is its spectral radius
    sigma = smoothing_matrix(31)
    assert_allclose(operator_norm(p.space, sigma), math.cos(math.pi * h / 2) ** 2, atol=1e-14)
    assert_allclose(p.phi.lip, 0.5 * math.cos(math.pi * h / 2) ** 2)
    assert isinstance(case_moving_obstacle(31, alpha=0.0).phi, ZeroMap)
    with pytest.raises(ConditionViolated):
        case_moving_obstacle(31, alpha=1.0)
    with pytest.raises(ValueError):
        case_moving_obstacle(7)


def test_moving_obstacle_contact_grows_with_alpha():
    contact = []
    for alpha in (0.0, 0.2, 0.5):
        sol = solve_qvi(case_moving_obstacle(63, alpha=alpha), tol=1e-12)
        contact.append(int(np.sum(sol.z >= 0.02 - 1e-9)))
    assert contact[0] > contact[1] > contact[2] > 0
