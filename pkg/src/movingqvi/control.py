"""Optimal control of moving-set QVIs with a quadratic tracking objective.

The state is ``y = S(b u + f)`` and the objective

    J(y, u) = 1/2 (y - y_d)' M_y (y - y_d) + alpha/2 u' M_u u.

Multipliers ``(p, mu)`` certify strong stationarity:

    J_y + A'(y)' p + (I - Phi'(y))' mu = 0,   J_u - b' p = 0,
    p in -C,   mu in C°,

with ``C`` the critical cone at the solution.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, RankDeficient
from .qvi_solver import solve_qvi
from .sensitivity import directional_derivative, linearize
from .sets import FREE, in_cone, in_polar

__all__ = [
    "ControlProblem",
    "StationarityCertificate",
    "BStationarityReport",
    "DescentResult",
    "recover_multipliers",
    "check_strong_stationarity",
    "check_b_stationarity",
    "solve_control_descent",
]


def _dense(mat):
    return mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat, dtype=float)


@dataclass(eq=False)
class ControlProblem:
    qvi: object
    control_space: object
    b_ctrl: np.ndarray
    y_d: np.ndarray
    alpha: float
    weight_y: np.ndarray = None
    weight_u: np.ndarray = None
    solve_kw: dict = field(default_factory=lambda: {"tol": 1e-12})

    def __post_init__(self):
        n, m = self.qvi.space.dim, self.control_space.dim
        self.b_ctrl = _dense(self.b_ctrl)
        if self.b_ctrl.shape != (n, m):
            raise DimensionError(f"b_ctrl must be {n}x{m}, got {self.b_ctrl.shape}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        self.y_d = self.qvi.space.check(self.y_d, "y_d")
        self.weight_y = np.eye(n) if self.weight_y is None else _dense(self.weight_y)
        self.weight_u = np.eye(m) if self.weight_u is None else _dense(self.weight_u)
        for name, w in (("weight_y", self.weight_y), ("weight_u", self.weight_u)):
            if not np.allclose(w, w.T) or np.linalg.eigvalsh(w)[0] <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")

    def state_problem(self, u):
        return self.qvi.with_f(self.qvi.f + self.b_ctrl @ np.asarray(u, dtype=float))

    def state(self, u):
        """QVI solution for control ``u``."""
        return solve_qvi(self.state_problem(u), **self.solve_kw)

    def objective(self, y, u):
        e = y - self.y_d
        u = np.asarray(u, dtype=float)
        return 0.5 * float(e @ self.weight_y @ e) + 0.5 * self.alpha * float(u @ self.weight_u @ u)

    def J_y(self, y):
        return self.weight_y @ (y - self.y_d)

    def J_u(self, u):
        return self.alpha * (self.weight_u @ np.asarray(u, dtype=float))

    def reduced_objective(self, u):
        return self.objective(self.state(u).y, u)


@dataclass
class StationarityCertificate:
    p: np.ndarray
    mu: np.ndarray
    res_adjoint: float
    res_gradient: float
    p_in_minus_cone: bool
    mu_in_polar: bool
    scale: float = 1.0
    tol: float = 1e-10

    def to_dict(self):
        return {
            "p": self.p.tolist(),
            "mu": self.mu.tolist(),
            "res_adjoint": self.res_adjoint,
            "res_gradient": self.res_gradient,
            "p_in_minus_cone": self.p_in_minus_cone,
            "mu_in_polar": self.mu_in_polar,
            "scale": self.scale,
            "tol": self.tol,
        }


def recover_multipliers(cp, y_bar, u_bar, lin, tol=1e-10):
    """Multipliers from the gradient equation (least squares) and the adjoint equation."""
    n = cp.qvi.space.dim
    b = cp.b_ctrl
    if np.linalg.matrix_rank(b) < n:
        raise RankDeficient("b_ctrl' is not injective: the control does not reach every load")
    j_u = cp.J_u(u_bar)
    j_y = cp.J_y(y_bar)
    p, *_ = np.linalg.lstsq(b.T, j_u, rcond=None)
    res_gradient = cp.control_space.dual_norm(b.T @ p - j_u)
    i_minus = np.eye(n) - lin.phi_jac
    mu = -np.linalg.solve(i_minus.T, j_y + lin.a_jac.T @ p)
    space = lin.space
    res_adjoint = space.dual_norm(j_y + lin.a_jac.T @ p + i_minus.T @ mu)
    scale = max(1.0, space.dual_norm(j_y), cp.control_space.dual_norm(j_u))
    return StationarityCertificate(
        p=p,
        mu=mu,
        res_adjoint=float(res_adjoint),
        res_gradient=float(res_gradient),
        p_in_minus_cone=in_cone(lin.cone, -p, tol, scale),
        mu_in_polar=in_polar(space, lin.cone, mu, tol, scale),
        scale=float(scale),
        tol=float(tol),
    )


def check_strong_stationarity(cert, lin=None, tol=None):
    """Residuals within ``tol * scale`` and both sign conditions."""
    tol = cert.tol if tol is None else tol
    if lin is not None:
        # re-evaluate the sign conditions at the requested tolerance
        p_ok = in_cone(lin.cone, -cert.p, tol, cert.scale)
        mu_ok = in_polar(lin.space, lin.cone, cert.mu, tol, cert.scale)
    else:
        p_ok, mu_ok = cert.p_in_minus_cone, cert.mu_in_polar
    lim = tol * cert.scale
    return bool(cert.res_adjoint <= lim and cert.res_gradient <= lim and p_ok and mu_ok)


@dataclass
class BStationarityReport:
    min_lhs: float
    lhs: np.ndarray
    scale: float
    byproducts_ok: bool
    n_dirs: int

    def passed(self, tol=1e-8):
        return bool(self.min_lhs >= -tol * self.scale)


def check_b_stationarity(cp, y_bar, u_bar, lin, n_dirs=100, tol=1e-8, seed=0, full_output=False):
    """Minimum of ``<J_y, S'(b h)> + <J_u, h>`` over random unit directions ``h``.

    Each sampled derivative is also checked against the cone conditions
    ``(I - Phi') x in C`` and ``b h - A' x in C°``.
    """
    rng = np.random.default_rng(seed)
    U = cp.control_space
    j_y = cp.J_y(y_bar)
    j_u = cp.J_u(u_bar)
    lhs = np.empty(n_dirs)
    x_max = 0.0
    ok = True
    for k in range(n_dirs):
        xi = rng.standard_normal(U.dim)
        while not np.any(xi):
            xi = rng.standard_normal(U.dim)
        h = xi / U.norm(xi)
        bh = cp.b_ctrl @ h
        x = directional_derivative(lin, bh)
        lhs[k] = float(j_y @ x + j_u @ h)
        x_max = max(x_max, lin.space.norm(x))
        w = x - lin.phi_jac @ x
        ok &= in_cone(lin.cone, w, 1e-8, lin.space.norm(x))
        ok &= in_polar(lin.space, lin.cone, bh - lin.a_jac @ x, 1e-8, lin.space.dual_norm(bh))
    scale = max(1.0, lin.space.dual_norm(j_y) * x_max + U.dual_norm(j_u))
    report = BStationarityReport(float(lhs.min()), lhs, float(scale), bool(ok), n_dirs)
    return report if full_output else report.min_lhs


@dataclass
class DescentResult:
    u: np.ndarray
    y: np.ndarray
    objective_history: list
    status: str
    iterations: int
    gradient_norm: float
    b_stationarity: BStationarityReport = None

    def __iter__(self):
        return iter((self.u, self.y, self.objective_history))


def _piece_derivative(cp, lin):
    """Derivative ``u -> y`` on the current piece; one-sided coordinates are held fixed."""
    status = np.array(lin.cone.status)
    free = np.flatnonzero(status == FREE)
    n = lin.space.dim
    rhs = cp.b_ctrl
    w = np.zeros((n, rhs.shape[1]))
    if free.size:
        w[free] = np.linalg.solve(lin.b_jac[np.ix_(free, free)], rhs[free])
    return lin.i_minus_phi_jac_inv @ w


def solve_control_descent(cp, u0, steps=200, step_rule="armijo", tol=1e-10, n_dirs=100, seed=0):
    """Descent on the reduced objective with backtracking.

    The search direction uses the derivative of the control-to-state map on
    the current piece: the reduced gradient for ``"armijo"``, the reduced
    Newton direction of the quadratic model for ``"newton"``.
    """
    if step_rule not in ("armijo", "newton"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    U = cp.control_space
    u = np.asarray(u0, dtype=float).copy()
    sol = cp.state(u)
    J = cp.objective(sol.y, u)
    history = [J]
    status = "max_steps"
    gnorm = np.inf
    lin = None
    step0 = 1.0
    k = 0
    for k in range(steps):
        lin = linearize(cp.state_problem(u), sol)
        D = _piece_derivative(cp, lin)
        g = D.T @ cp.J_y(sol.y) + cp.J_u(u)
        gnorm = U.dual_norm(g)
        if gnorm <= tol * max(1.0, abs(J)):
            status = "converged"
            break
        if step_rule == "newton":
            H = D.T @ cp.weight_y @ D + cp.alpha * cp.weight_u
            d = -np.linalg.solve(H, g)
            s = 1.0
        else:
            d = -U.riesz(g)
            s = step0
        slope = float(g @ d)
        for _ in range(60):
            u_try = u + s * d
            sol_try = cp.state(u_try)
            J_try = cp.objective(sol_try.y, u_try)
            if J_try <= J + 1e-4 * s * slope:
                break
            s *= 0.5
        else:
            status = "line_search_failed"
            break
        if J - J_try <= 1e-15 * max(1.0, abs(J)) and s < 1e-12:
            status = "stalled"
            break
        u, sol, J = u_try, sol_try, J_try
        history.append(J)
        step0 = min(2.0 * s, 1e6)
    if lin is None or status != "converged":
        lin = linearize(cp.state_problem(u), sol)
    b_rep = check_b_stationarity(cp, sol.y, u, lin, n_dirs=n_dirs, seed=seed, full_output=True)
    return DescentResult(u, sol.y, history, status, k, float(gnorm), b_rep)
