"""Built-in instances: sharpness counterexamples, the obstacle projection study
and a moving-obstacle QVI."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConditionViolated
from .operators import (
    Certificate,
    ComposedOperator,
    LinearMap,
    LinearOperator,
    ZeroMap,
    check_interpolation_inequality,
    composed_constants,
    estimate_constants,
    measured_certificate,
    thresholds,
)
from .qvi_solver import QviProblem
from .sets import Box, Span
from .space import Space, grid_points, load_vector, stiffness_space
from .vi_solver import ViProblem, solve_vi

__all__ = [
    "CaseReport",
    "case_sharp_general",
    "case_sharp_symmetric",
    "case_tightness",
    "case_obstacle_projection",
    "case_moving_obstacle",
    "sharp_general_data",
    "sharp_symmetric_data",
    "printed_symmetric_phi",
    "smoothing_matrix",
    "obstacle_closed_form",
    "OBSTACLE_CONSTANT",
    "DEFAULT_H_LIST",
]

OBSTACLE_CONSTANT = math.sqrt(2.0**2.5 / 3.0)
DEFAULT_H_LIST = tuple(float(v) for v in np.logspace(-4, -2, 9))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class CaseReport:
    name: str
    parameters: dict = field(default_factory=dict)
    quantities: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def check(self, name, value, target, tol):
        """Record ``|value - target| <= tol``."""
        ok = bool(abs(value - target) <= tol)
        self.assertions.append(
            {"name": name, "value": float(value), "target": float(target), "tol": float(tol), "passed": ok}
        )
        return ok

    def check_range(self, name, value, lo, hi):
        ok = bool(lo <= value <= hi)
        self.assertions.append(
            {"name": name, "value": float(value), "range": [float(lo), float(hi)], "passed": ok}
        )
        return ok

    def check_true(self, name, flag, tol):
        ok = bool(flag)
        self.assertions.append({"name": name, "value": ok, "tol": float(tol), "passed": ok})
        return ok

    def assertion(self, name):
        for a in self.assertions:
            if a["name"] == name:
                return a
        raise KeyError(name)

    @property
    def passed(self):
        return all(a["passed"] for a in self.assertions)

    def to_dict(self):
        return _jsonable(
            {
                "name": self.name,
                "parameters": self.parameters,
                "quantities": self.quantities,
                "assertions": self.assertions,
                "tables": self.tables,
                "notes": self.notes,
                "passed": self.passed,
            }
        )


def _check_pair(mu_a, l_a):
    if not (0 < mu_a < l_a):
        raise ValueError(f"need 0 < mu_A < L_A, got mu_A={mu_a}, L_A={l_a}")


def _span_analysis(report, a_mat, phi_mat, z, tol):
    """VI on ``Span{z}`` with ``B = A (I - Phi)^{-1}``.

    Writing the solution as ``s z`` the VI is the scalar equation
    ``s <B z, z> = <f, z>``; with ``<B z, z> = 0`` it has no solution when
    ``<f, z> != 0`` and every ``s`` solves it when ``<f, z> = 0``.
    """
    space = Space(dim=2)
    b_mat = a_mat @ np.linalg.inv(np.eye(2) - phi_mat)
    q = float(z @ b_mat @ z)
    report.quantities["zBz"] = q
    report.check("zBz", q, 0.0, tol)
    f_par = z.copy()
    f_perp = np.array([-z[1], z[0]])
    s_grid = np.linspace(-3.0, 3.0, 13)
    res_par = np.abs(s_grid * q - f_par @ z)
    res_perp = np.abs(s_grid * q - f_perp @ z)
    report.quantities["span_residual_f_parallel_min"] = float(res_par.min())
    report.quantities["span_residual_f_orthogonal_max"] = float(res_perp.max())
    report.check_true(
        "span_no_solution_when_f_dot_z_nonzero", res_par.min() > 0.5 * float(z @ z), tol
    )
    report.check_true("span_solution_line_when_f_dot_z_zero", res_perp.max() <= 4 * tol, tol)
    # the generic solver refuses the instance
    mu_b, _ = estimate_constants(space, b_mat)
    report.quantities["measured_mu_B"] = mu_b
    a_op = LinearOperator(a_mat, Certificate(*estimate_constants(space, a_mat)))
    phi = LinearMap(phi_mat, float(np.linalg.norm(phi_mat, 2)))
    try:
        measured_certificate(space, a_op, phi)
        refused = False
    except ConditionViolated as exc:
        refused = True
        report.notes.append(str(exc))
    report.check_true("solver_refuses_non_coercive", refused, tol)


def sharp_general_data(mu_a, l_a):
    """``(A, Phi, x, z)`` of the rotation-scaling counterexample."""
    _check_pair(mu_a, l_a)
    c = math.sqrt(l_a**2 - mu_a**2)
    a_mat = np.array([[mu_a, -c], [c, mu_a]])
    x = np.array([1.0, 0.0])
    lip_phi = mu_a / l_a
    phi = (lip_phi / l_a) * np.outer(a_mat @ x, x)
    z = x - phi @ x
    return a_mat, phi, x, z


def case_sharp_general(mu_A, L_A, tol=1e-12):
    """Non-strongly-monotone A with Lip(Phi) = mu_A/L_A and a non-coercive composition."""
    a_mat, phi, x, z = sharp_general_data(mu_A, L_A)
    rep = CaseReport("sharp_general", {"mu_A": mu_A, "L_A": L_A})
    c = a_mat[1, 0]
    lip_phi = mu_A / L_A
    rep.quantities.update(
        c_A=c, A=a_mat, Phi=phi, x=x, z=z, lip_phi=lip_phi, z_dot_Ax=float(z @ a_mat @ x)
    )
    mu, lip = estimate_constants(None, a_mat)
    rep.check("mu_A", mu, mu_A, 1e-10)
    rep.check("L_A", lip, L_A, 1e-10)
    sigma = float(np.linalg.norm(phi, 2))
    rep.quantities["sigma_max_Phi"] = sigma
    rep.check("sigma_max_Phi", sigma, lip_phi, tol)
    rep.check("z_dot_Ax", float(z @ a_mat @ x), 0.0, tol)
    _span_analysis(rep, a_mat, phi, z, tol)
    return rep


def sharp_symmetric_data(mu_a, l_a):
    """``(A, Phi, x)`` with ``Phi = 2/(mu+L) (A x) x^T``."""
    _check_pair(mu_a, l_a)
    s = mu_a + l_a
    a_mat = np.diag([mu_a, l_a])
    x = np.array([math.sqrt(l_a / s), math.sqrt(mu_a / s)])
    phi = (2.0 / s) * np.outer(a_mat @ x, x)
    return a_mat, phi, x


def printed_symmetric_phi(mu_a, l_a):
    """Alternative closed-form matrix with ``mu^2 L`` on the diagonal.

    It agrees with the rank-one construction only when ``mu_A = 1``.
    """
    s = mu_a + l_a
    r = math.sqrt(mu_a * l_a)
    return 2.0 / s**2 * np.array([[mu_a**2 * l_a, mu_a * r], [l_a * r, mu_a**2 * l_a]])


def _symmetric_assertions(rep, prefix, a_mat, phi, x, lip_phi, tol):
    sigma = float(np.linalg.norm(phi, 2))
    q = float(x @ a_mat @ (x - phi @ x))
    rep.quantities[f"{prefix}sigma_max_Phi"] = sigma
    rep.quantities[f"{prefix}xA(I-Phi)x"] = q
    rep.check(f"{prefix}sigma_max_Phi", sigma, lip_phi, tol)
    rep.check(f"{prefix}xA(I-Phi)x", q, 0.0, tol)


def case_sharp_symmetric(mu_A, L_A, tol=1e-12):
    """Symmetric A with Lip(Phi) = 2 sqrt(mu L)/(mu + L) and a non-coercive composition."""
    a_mat, phi, x = sharp_symmetric_data(mu_A, L_A)
    lip_phi = 2.0 * math.sqrt(mu_A * L_A) / (mu_A + L_A)
    rep = CaseReport("sharp_symmetric", {"mu_A": mu_A, "L_A": L_A})
    y = x - phi @ x
    rep.quantities.update(A=a_mat, Phi=phi, x=x, y=y, lip_phi=lip_phi, norm_x=float(np.linalg.norm(x)))
    rep.check("norm_x", float(np.linalg.norm(x)), 1.0, tol)
    _symmetric_assertions(rep, "", a_mat, phi, x, lip_phi, tol)
    space = Space(dim=2)
    a_op = LinearOperator(a_mat, Certificate(mu_A, L_A, has_convex_potential=True))
    slack = check_interpolation_inequality(space, a_op, [(x, np.zeros(2))])
    rep.quantities["interpolation_slack"] = slack
    rep.check("interpolation_slack", slack, 0.0, tol)
    _span_analysis(rep, a_mat, phi, y, tol)

    # the alternative closed form, reported without substitution
    printed = printed_symmetric_phi(mu_A, L_A)
    alt = CaseReport("printed")
    _symmetric_assertions(alt, "printed_", a_mat, printed, x, lip_phi, tol)
    rep.quantities["printed_Phi"] = printed
    rep.quantities.update(alt.quantities)
    rep.quantities["printed_assertions"] = alt.assertions
    rep.quantities["printed_passes"] = alt.passed
    rep.notes.append(
        "printed matrix (mu^2 L diagonal) "
        + ("satisfies" if alt.passed else "fails")
        + " the sharpness identities at these parameters; the rank-one matrix is used"
    )
    return rep


def case_tightness(mu_A, L_A, which="symmetric", scale=0.99, tol=1e-10, max_iter=5_000_000):
    """Scaled-down counterexample map: coercive composition and a converging solve.

    The VI is posed on the line spanned by ``(I - Phi) x`` with a load that is
    not orthogonal to it, which is exactly where the unscaled map fails.
    """
    if which == "general":
        a_mat, phi, x, _ = sharp_general_data(mu_A, L_A)
        cert_a = Certificate(mu_A, L_A)
        bound = mu_A / L_A
    elif which == "symmetric":
        a_mat, phi, x = sharp_symmetric_data(mu_A, L_A)
        cert_a = Certificate(mu_A, L_A, has_convex_potential=True)
        bound = 2.0 * math.sqrt(mu_A * L_A) / (mu_A + L_A)
    else:
        raise ValueError(f"unknown geometry {which!r}")
    phi = scale * phi
    lip_phi = scale * bound
    space = Space(dim=2)
    a_op = LinearOperator(a_mat, cert_a)
    pmap = LinearMap(phi, lip_phi)
    rep = CaseReport("tightness", {"mu_A": mu_A, "L_A": L_A, "which": which, "scale": scale})
    formula = composed_constants(cert_a, lip_phi)
    measured = measured_certificate(space, a_op, pmap)
    rep.quantities.update(
        formula_mu_B=formula.mu, formula_L_B=formula.lip, measured_mu_B=measured.mu,
        measured_L_B=measured.lip,
    )
    rep.check_true("formula_mu_B_positive", formula.mu > 0, 0.0)
    rep.check_true("measured_mu_B_positive", measured.mu > 0, 0.0)
    line = x - phi @ x
    f = a_mat @ x
    prob = ViProblem(space, ComposedOperator(a_op, pmap, space), measured, Span([line]), f)
    rep_vi = solve_vi(prob, tol=tol, max_iter=max_iter)
    b_mat = a_mat @ np.linalg.inv(np.eye(2) - phi)
    exact = (f @ line) / (line @ b_mat @ line) * line
    err = float(np.linalg.norm(rep_vi.solution - exact))
    rep.quantities.update(iterations=rep_vi.iterations, residual=rep_vi.residual, error=err)
    rep.check_true("solver_converged", rep_vi.residual <= tol, tol)
    rep.check("solution_error", err, 0.0, max(rep_vi.error_bound, tol))
    return rep


# -- obstacle projection study -------------------------------------------


def obstacle_closed_form(x, level):
    """Projection of the unit-load solution onto ``{v <= level}`` on (0, 1).

    The right branch is the reflection of the left one, as required by
    ``y(1) = 0`` and symmetry.
    """
    x = np.asarray(x, dtype=float)
    t = math.sqrt(2.0 * level)
    left = t * x - 0.5 * x**2
    right = t * (1.0 - x) - 0.5 * (1.0 - x) ** 2
    return np.where(x <= t, left, np.where(x >= 1.0 - t, right, level))


def _obstacle_solve(space, load, level):
    a_op = LinearOperator(space.gram_matrix(), Certificate(1.0, 1.0, has_convex_potential=True))
    n = space.dim
    prob = ViProblem(space, a_op, a_op.certificate, Box.uniform(n, upper=level), load)
    return solve_vi(prob, tol=1e-12)


def case_obstacle_projection(n_grid=4096, h_list=DEFAULT_H_LIST):
    """Norm of the obstacle solution against the obstacle level ``h``.

    Fits ``log|y_h| = log C + p log h`` and reports ``|y_h - y_0| / h``.
    """
    if n_grid < 1023:
        raise ValueError("n_grid must be >= 1023")
    h_arr = np.array(sorted(float(v) for v in h_list), dtype=float)
    if h_arr.size < 2 or h_arr[0] <= 0 or h_arr[-1] > 0.125:
        raise ValueError("h_list needs at least two values in (0, 1/8]")
    cell = 1.0 / (n_grid + 1)
    t_min = math.sqrt(2.0 * h_arr[0])
    if t_min < 4 * cell:
        raise ValueError(
            f"grid too coarse: t_h={t_min:.3e} spans fewer than 4 cells of width {cell:.3e}"
        )
    space = stiffness_space(n_grid)
    load = load_vector(n_grid)
    xs = grid_points(n_grid)
    rows = []
    for level in h_arr:
        sol = _obstacle_solve(space, load, level).solution
        nrm = space.norm(sol)
        exact = obstacle_closed_form(xs, level)
        rows.append(
            [float(level), nrm, nrm / level, float(np.max(np.abs(sol - exact)))]
        )
    rows_arr = np.array(rows)
    slope, intercept = np.polyfit(np.log(rows_arr[:, 0]), np.log(rows_arr[:, 1]), 1)
    const = math.exp(intercept)
    rep = CaseReport("obstacle_projection", {"n_grid": n_grid, "h_list": h_arr})
    rep.tables["obstacle"] = {
        "columns": ["h", "norm", "ratio", "max_error_vs_closed_form"],
        "rows": rows,
    }
    rep.quantities.update(slope=slope, constant=const, closed_form_constant=OBSTACLE_CONSTANT)
    rep.check_range("slope", slope, 0.73, 0.77)
    rep.check("constant", const, OBSTACLE_CONSTANT, 0.02 * OBSTACLE_CONSTANT)
    # ratios ordered by decreasing h must increase
    ratios = rows_arr[::-1, 2]
    rep.check_true("ratio_increasing_as_h_decreases", bool(np.all(np.diff(ratios) > 0)), 0.0)
    # y_0 = 0
    zero = _obstacle_solve(space, load, 0.0).solution
    rep.quantities["norm_y0"] = space.norm(zero)
    rep.check("norm_y0", space.norm(zero), 0.0, 1e-14)
    t = math.sqrt(2.0 * h_arr[-1])
    printed_at_1 = -t - 0.5
    rep.quantities["printed_right_branch_at_1"] = printed_at_1
    rep.quantities["reflected_right_branch_at_1"] = float(obstacle_closed_form(np.array([1.0]), h_arr[-1])[0])
    rep.notes.append(
        "right branch -t x - x^2/2 violates y(1) = 0; reflected branch t(1-x) - (1-x)^2/2 used"
    )
    return rep


# -- moving obstacle -----------------------------------------------------


def smoothing_matrix(n):
    """Tridiagonal averaging ``(1/4, 1/2, 1/4)``."""
    return sp.diags([0.25, 0.5, 0.25], [-1, 0, 1], shape=(n, n), format="csr")


def case_moving_obstacle(n_grid=255, alpha=0.5, obstacle=0.02, load=1.0):
    """Obstacle QVI whose upper obstacle moves with a smoothed copy of the state.

    ``Q(y) = {v <= obstacle} + alpha * S y`` on the stiffness geometry with
    ``A`` the Riesz map. ``S`` is a polynomial in the stiffness matrix, so its
    M-norm is its spectral radius ``cos(pi h / 2)^2 < 1``.
    """
    if n_grid < 15:
        raise ValueError("n_grid must be >= 15")
    space = stiffness_space(n_grid)
    cert = Certificate(1.0, 1.0, has_convex_potential=True)
    limit = thresholds(cert.gamma)["convex_potential"]
    if not (0 <= alpha < limit):
        raise ConditionViolated(f"alpha={alpha} must lie in [0, {limit:g})")
    h = 1.0 / (n_grid + 1)
    norm_s = math.cos(0.5 * math.pi * h) ** 2
    a_op = LinearOperator(space.gram_matrix(), cert)
    phi = ZeroMap() if alpha == 0 else LinearMap(alpha * smoothing_matrix(n_grid), alpha * norm_s)
    return QviProblem(
        space=space,
        a_op=a_op,
        phi=phi,
        set_k=Box.uniform(n_grid, upper=obstacle),
        f=load_vector(n_grid, load),
    )
