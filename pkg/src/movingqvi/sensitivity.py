"""Directional derivatives of the QVI solution map f -> y.

At a solution (y, z, lam) the derivative in direction h solves a QVI over the
moving critical cone C + Phi'(y) x; with w = (I - Phi'(y)) x this is the
linear VI over C for B'(z) = A'(y) (I - Phi'(y))^{-1}.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import MaxIterations, NonCoercive, SingularLinearization
from .operators import Certificate, estimate_constants
from .qvi_solver import solve_qvi
from .sets import (
    BiactiveWarning,
    as_box,
    cone_generators,
    critical_cone,
    in_cone,
)
from .vi_solver import solve_linear_vi_on_cone

__all__ = [
    "Linearization",
    "FdRow",
    "FdResult",
    "linearize",
    "directional_derivative",
    "fd_check",
    "verify_linearized_qvi",
    "solve_linearized_qvi_sequential",
    "DEFAULT_T_LIST",
]

DEFAULT_T_LIST = (1e-2, 1e-3, 1e-4, 1e-5)


def _dense(mat):
    return mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat, dtype=float)


@dataclass(eq=False)
class Linearization:
    space: object
    y_bar: np.ndarray
    z_bar: np.ndarray
    lam_bar: np.ndarray
    a_jac: np.ndarray
    phi_jac: np.ndarray
    i_minus_phi_jac_inv: np.ndarray
    b_jac: np.ndarray
    cone: object
    b_certificate: Certificate

    @property
    def biactive(self):
        return self.cone.biactive


def linearize(p, sol, tol_act=1e-8, tol_lam=1e-8):
    """Jacobians and critical cone at a computed solution."""
    space = p.space
    y = sol.y
    n = space.dim
    a_jac = _dense(p.a_op.jac(y))
    phi_jac = _dense(p.phi.jac(y))
    i_minus = np.eye(n) - phi_jac
    if np.linalg.cond(i_minus) > 1e12:
        raise SingularLinearization("I - Phi'(y) is singular")
    inv = np.linalg.inv(i_minus)
    b_jac = a_jac @ inv
    mu, lip = estimate_constants(space, b_jac)
    if mu <= 0:
        raise NonCoercive(f"B'(z) is not coercive (mu={mu:.3e})")
    z = y - p.phi(y)
    lam = p.f - p.a_op(y)
    box = as_box(p.set_k, n)
    # project z onto the box to strip solver noise before classification
    z_clean = np.clip(z, box.lower, box.upper)
    # activity cannot be resolved below the certified solver error
    err_z = 10.0 * sol.vi_report.error_bound
    err_lam = 10.0 * p.a_op.certificate.lip * sol.y_error_bound
    zs = np.max(np.abs(z_clean)) or 1.0
    ls = np.max(np.abs(lam)) or 1.0
    tol_act = max(tol_act, err_z / zs)
    tol_lam = max(tol_lam, err_lam / ls)
    cone = critical_cone(space, box, z_clean, lam, tol_act, tol_lam)
    return Linearization(
        space=space,
        y_bar=y,
        z_bar=z,
        lam_bar=lam,
        a_jac=a_jac,
        phi_jac=phi_jac,
        i_minus_phi_jac_inv=inv,
        b_jac=b_jac,
        cone=cone,
        b_certificate=Certificate(mu, max(lip, mu)),
    )


def directional_derivative(lin, h, tol=1e-12):
    """Solve for ``w`` on the critical cone, return ``x = (I - Phi')^{-1} w``."""
    w = solve_linear_vi_on_cone(lin.space, lin.b_jac, lin.cone, h, tol, lin.b_certificate)
    return lin.i_minus_phi_jac_inv @ w


def solve_linearized_qvi_sequential(lin, h, tol=1e-12, max_outer=10_000):
    """Solve the linearized QVI for ``x`` directly, without the change of variables.

    Iterates ``x <- c + u`` with ``c = Phi' x`` and ``u`` the solution of the
    linear VI for ``A'`` over the cone with load ``h - A' c``.
    """
    h = np.asarray(h, dtype=float)
    mu, lip = estimate_constants(lin.space, lin.a_jac)
    cert = Certificate(mu, max(lip, mu))
    x = np.zeros_like(h)
    step = np.inf
    for _ in range(max_outer):
        c = lin.phi_jac @ x
        u = solve_linear_vi_on_cone(lin.space, lin.a_jac, lin.cone, h - lin.a_jac @ c, tol, cert)
        x_new = c + u
        step = lin.space.norm(x_new - x)
        x = x_new
        if step <= tol * max(1.0, lin.space.norm(x)):
            return x
    raise MaxIterations(f"linearized QVI iteration stalled at step {step:.3e}")


def verify_linearized_qvi(lin, x, h, tol=1e-8):
    """Check ``x`` solves the linearized QVI.

    Membership of ``w = x - Phi' x`` in the cone, and the variational
    inequality tested on every cone generator plus the directions ``0`` and
    ``2w`` (which together make the test exact for a polyhedral cone).
    """
    x = np.asarray(x, dtype=float)
    w = x - lin.phi_jac @ x
    if not in_cone(lin.cone, w, tol):
        return False
    g = lin.a_jac @ x - np.asarray(h, dtype=float)
    enorm = np.sqrt(lin.space.diagonal())
    for i, sign in cone_generators(lin.cone):
        # v - x = d for a unit generator d
        if sign * g[i] / enorm[i] < -tol:
            return False
    return abs(float(g @ w)) <= tol * max(1.0, lin.space.norm(w))


@dataclass
class FdRow:
    t: float
    fd_error: float
    residual: float
    noise_floor: float


@dataclass
class FdResult:
    x: np.ndarray
    rows: list = field(default_factory=list)
    biactive: tuple = ()
    x_norm: float = 0.0

    @property
    def errors(self):
        return [r.fd_error for r in self.rows]

    def is_monotone(self):
        """Errors non-increasing as t decreases, up to each row's solver noise floor."""
        return all(
            b.fd_error <= a.fd_error + b.noise_floor for a, b in zip(self.rows, self.rows[1:])
        )

    def final_ok(self, solver_tol, rel=1e-3):
        t_min = self.rows[-1].t
        norm_x = self.x_norm
        return self.rows[-1].fd_error <= max(10 * solver_tol / t_min, rel * norm_x)


def fd_check(
    p, sol, lin, h, t_list=DEFAULT_T_LIST, tol=1e-12, solver=None, workers=1, **solver_kw
):
    """Compare difference quotients ``(S(f + t h) - y)/t`` against the derivative.

    ``noise_floor`` bounds the part of the error explained by the solver
    tolerance: ``(err(y_t) + err(y))/t`` from the VI error bounds.
    """
    solver = solver or solve_qvi
    if lin.biactive:
        warnings.warn(
            "biactive coordinates: difference quotients may converge slowly",
            BiactiveWarning,
            stacklevel=2,
        )
    x = directional_derivative(lin, h)
    h = np.asarray(h, dtype=float)
    space = p.space
    base_err = sol.y_error_bound

    def row(t):
        st = solver(p.with_f(p.f + t * h), tol=tol, z0=sol.z, **solver_kw)
        err = space.norm((st.y - sol.y) / t - x)
        floor = (st.y_error_bound + base_err) / t
        return FdRow(float(t), float(err), float(st.qvi_residual), float(floor))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, t_list))
    else:
        rows = [row(t) for t in t_list]
    return FdResult(x=x, rows=rows, biactive=tuple(lin.biactive), x_norm=space.norm(x))
