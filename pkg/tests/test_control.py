from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from movingqvi.cases import case_moving_obstacle
from movingqvi.control import (
    ControlProblem,
    check_b_stationarity,
    check_strong_stationarity,
    recover_multipliers,
    solve_control_descent,
)
from movingqvi.exceptions import DimensionError, RankDeficient
from movingqvi.operators import Certificate, LinearOperator, ZeroMap
from movingqvi.qvi_solver import QviProblem
from movingqvi.sensitivity import directional_derivative, linearize
from movingqvi.sets import FREE, ZERO, WholeSpace
from movingqvi.space import Space

U_BAR = np.array([0.5, 0.4])
Y_BAR = np.array([0.5, 0.2])


def two_by_two(alpha=1.0):
    A = LinearOperator(np.diag([1.0, 2.0]), Certificate(1.0, 2.0, True))
    qvi = QviProblem(Space(dim=2), A, ZeroMap(), WholeSpace(), np.zeros(2))
    return ControlProblem(qvi, Space(dim=2), np.eye(2), np.ones(2), alpha)


def obstacle_control(alpha_phi=0.3, alpha=1e-2, n=16):
    qvi = case_moving_obstacle(n, alpha=alpha_phi)
    h = 1.0 / (n + 1)
    return ControlProblem(
        qvi, Space(h * np.eye(n)), h * np.eye(n), np.full(n, 0.05), alpha, h * np.eye(n), h * np.eye(n)
    )


def _certify(cp, u):
    sol = cp.state(u)
    lin = linearize(cp.state_problem(u), sol)
    return sol, lin, recover_multipliers(cp, sol.y, u, lin)


def test_closed_form_instance():
    cp = two_by_two()
    sol, lin, cert = _certify(cp, U_BAR)
    assert_allclose(sol.y, Y_BAR, atol=1e-12)
    assert_allclose(cert.p, U_BAR, atol=1e-10)
    assert_allclose(cert.mu, 0, atol=1e-10)
    assert cert.p_in_minus_cone and cert.mu_in_polar
    assert check_strong_stationarity(cert, lin)
    assert cert.to_dict()["p"] == cert.p.tolist()


def test_strong_stationarity_negative_cases():
    cp = two_by_two()
    _, lin, cert = _certify(cp, U_BAR)
    bad_mu = replace(cert, mu=np.array([1.0, 0.0]))
    assert not check_strong_stationarity(bad_mu, lin)
    assert not check_strong_stationarity(replace(cert, res_gradient=1.0))


def test_p_sign_on_strongly_active_coordinate():
    cp = obstacle_control()
    res = solve_control_descent(cp, np.zeros(16), step_rule="newton")
    sol, lin, cert = _certify(cp, res.u)
    assert check_strong_stationarity(cert, lin)
    strong = np.array(lin.cone.status) == ZERO
    assert strong.any()
    bump = np.where(strong, 1.0, 0.0)
    assert not check_strong_stationarity(replace(cert, p=cert.p + bump), lin)
    free = np.array(lin.cone.status) == FREE
    mu_bad = cert.mu + np.where(free, 1.0, 0.0)
    assert not check_strong_stationarity(replace(cert, mu=mu_bad), lin)


def test_multipliers_deterministic_and_unique():
    cp = obstacle_control()
    res = solve_control_descent(cp, np.zeros(16), step_rule="newton")
    sol, lin, c1 = _certify(cp, res.u)
    c2 = recover_multipliers(cp, sol.y, res.u, lin)
    assert_allclose(c1.p, c2.p, rtol=0, atol=0)
    # any p solving the gradient equation is this one
    p_alt = np.linalg.solve(cp.b_ctrl.T, cp.J_u(res.u))
    assert_allclose(c1.p, p_alt, atol=1e-10)


def test_rank_deficient_control():
    A = LinearOperator(np.eye(3), Certificate(1.0, 1.0, True))
    qvi = QviProblem(Space(dim=3), A, ZeroMap(), WholeSpace(), np.zeros(3))
    b = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    cp = ControlProblem(qvi, Space(dim=2), b, np.ones(3), 1.0)
    sol = cp.state(np.zeros(2))
    lin = linearize(cp.state_problem(np.zeros(2)), sol)
    with pytest.raises(RankDeficient):
        recover_multipliers(cp, sol.y, np.zeros(2), lin)


def test_control_problem_validation():
    cp = two_by_two()
    with pytest.raises(DimensionError):
        ControlProblem(cp.qvi, Space(dim=3), np.eye(2), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        ControlProblem(cp.qvi, Space(dim=2), np.eye(2), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        ControlProblem(cp.qvi, Space(dim=2), np.eye(2), np.ones(2), 1.0, weight_y=-np.eye(2))


def test_b_stationarity_at_and_off_stationary_point():
    cp = two_by_two()
    _, lin, _ = _certify(cp, U_BAR)
    rep = check_b_stationarity(cp, Y_BAR, U_BAR, lin, n_dirs=100, full_output=True)
    assert rep.min_lhs >= -1e-8
    assert rep.byproducts_ok and rep.passed()
    shifted = U_BAR + np.array([0.1, 0.0])
    sol = cp.state(shifted)
    lin_s = linearize(cp.state_problem(shifted), sol)
    assert check_b_stationarity(cp, sol.y, shifted, lin_s) < 0


def test_lhs_odd_in_all_free_case(rng):
    cp = two_by_two()
    u = np.array([0.2, -0.3])
    sol = cp.state(u)
    lin = linearize(cp.state_problem(u), sol)

    def lhs(h):
        return cp.J_y(sol.y) @ directional_derivative(lin, cp.b_ctrl @ h) + cp.J_u(u) @ h

    for _ in range(5):
        h = rng.standard_normal(2)
        assert_allclose(lhs(-h), -lhs(h), atol=1e-14)


@pytest.mark.parametrize("rule", ["armijo", "newton"])
def test_descent_two_by_two(rule):
    res = solve_control_descent(two_by_two(), np.zeros(2), step_rule=rule)
    assert res.status == "converged"
    assert_allclose(res.u, U_BAR, atol=1e-6)
    hist = res.objective_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    u, y, _ = res
    assert_allclose(y, Y_BAR, atol=1e-6)


def test_descent_large_penalty():
    res = solve_control_descent(two_by_two(alpha=1e6), np.ones(2), step_rule="newton")
    assert np.max(np.abs(res.u)) <= 2e-6


@pytest.mark.parametrize("alpha_phi", [0.0, 0.3])
def test_descent_obstacle_instance(alpha_phi):
    cp = obstacle_control(alpha_phi)
    res = solve_control_descent(cp, np.zeros(16), step_rule="newton")
    assert res.status == "converged"
    assert res.b_stationarity.min_lhs >= -1e-6
    _, lin, cert = _certify(cp, res.u)
    assert len(lin.cone.active) > 0 and not lin.biactive
    assert check_strong_stationarity(cert, lin)


def test_descent_rejects_unknown_rule():
    with pytest.raises(ValueError):
        solve_control_descent(two_by_two(), np.zeros(2), step_rule="cauchy")
