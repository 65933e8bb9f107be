"""Projected fixed-point solver for strongly monotone variational inequalities

    find z in K with  <B(z) - f, v - z> >= 0  for all v in K,

and a direct solver for linear VIs over coordinate cones.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import MaxIterations, NonCoercive, NonContractive
from .operators import Certificate, LinearOperator, estimate_constants
from .sets import FREE, NONNEG, NONPOS, ZERO, CoordCone, project

__all__ = [
    "ViProblem",
    "SolveReport",
    "natural_residual",
    "solve_vi",
    "solve_linear_vi_on_cone",
]


@dataclass(frozen=True, eq=False)
class ViProblem:
    space: object
    operator: object
    certificate: Certificate
    set: object
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", self.space.check(self.f, "f"))

    @property
    def step(self):
        return self.certificate.mu / self.certificate.lip**2

    @property
    def contraction(self):
        """Lipschitz constant of the projected step, sqrt(1 - mu^2/L^2)."""
        c = self.certificate
        return math.sqrt(max(1.0 - (c.mu / c.lip) ** 2, 0.0))

    def apply(self, z, tol=None):
        if tol is not None and hasattr(self.operator, "evaluate"):
            return self.operator.evaluate(z, tol)
        return np.asarray(self.operator(z), dtype=float)


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    contraction_estimate: float = 0.0
    status: str = "converged"
    error_bound: float = 0.0

    @property
    def residual(self):
        return self.residual_history[-1] if self.residual_history else math.inf


def _fixed_point_step(p, z, tau, inner_tol):
    grad = p.space.riesz(p.apply(z, inner_tol) - p.f)
    return project(p.space, p.set, z - tau * grad)


def natural_residual(p, z, inner_tol=1e-13):
    """``|z - Proj_K(z - tau0 R(B(z) - f))|_M`` with ``tau0 = mu_B / L_B^2``."""
    z = p.space.check(z)
    return p.space.norm(z - _fixed_point_step(p, z, p.step, inner_tol))


def solve_vi(p, tol=1e-10, max_iter=200_000, z0=None):
    """Iterate ``z <- Proj_K(z - tau R(B(z) - f))`` until the natural residual is <= tol."""
    q = p.contraction
    if p.certificate.mu <= 0 or q >= 1.0:
        raise NonContractive("projected step is not a contraction")
    tau = p.step
    inner_tol = tol / 10.0
    z = project(p.space, p.set, np.zeros(p.space.dim) if z0 is None else np.asarray(z0, float))
    history = []
    ratio = 0.0
    floor = 0.0
    for k in range(max_iter):
        z_next = _fixed_point_step(p, z, tau, inner_tol)
        r = p.space.norm(z - z_next)
        if history and history[-1] > floor:
            ratio = max(ratio, r / history[-1])
        history.append(r)
        if k == 0:
            # successive differences below this are rounding noise
            floor = 1e-12 * max(p.space.norm(z_next), r)
        if r <= tol:
            return SolveReport(
                solution=z,
                iterations=k,
                residual_history=history,
                contraction_estimate=ratio,
                status="converged",
                error_bound=r / (1.0 - q),
            )
        z = z_next
    report = SolveReport(z, max_iter, history, ratio, "max_iterations", history[-1] / (1.0 - q))
    raise MaxIterations(f"VI solver stopped at residual {history[-1]:.3e} > {tol:g}", report)


def _cone_kkt_ok(B, h, status, w, tol):
    g = B @ w - h
    gs = tol * max(np.max(np.abs(h)), np.max(np.abs(B)) * np.max(np.abs(w), initial=0), 1e-300)
    ws = tol * max(np.max(np.abs(w), initial=0), 1e-300)
    for i, s in enumerate(status):
        sgn = 1.0 if s == NONNEG else -1.0
        if s == ZERO and abs(w[i]) > ws:
            return False
        if s == FREE and abs(g[i]) > gs:
            return False
        if s in (NONNEG, NONPOS):
            wi, gi = sgn * w[i], sgn * g[i]
            if wi < -ws or gi < -gs or min(wi, gi) > max(ws, gs):
                return False
    return True


def _solve_on_pattern(B, h, clamp):
    n = h.size
    w = np.zeros(n)
    F = np.flatnonzero(~clamp)
    if F.size:
        w[F] = np.linalg.solve(B[np.ix_(F, F)], h[F])
    return w


def solve_linear_vi_on_cone(space, b_lin, cone, h, tol=1e-12, certificate=None):
    """Unique ``w`` in a coordinate cone with ``<b_lin w - h, v - w> >= 0`` on the cone.

    Zero coordinates are fixed, free ones solve equations and one-sided ones
    are handled by a primal-dual active-set loop; if that cycles, the
    projected fixed-point solver is used and its active set is re-solved.
    """
    B = np.asarray(b_lin, dtype=float)
    h = space.check(h, "h")
    status = np.array(cone.status)
    if certificate is None:
        mu, lip = estimate_constants(space, B)
        if mu <= 0:
            raise NonCoercive(f"linearized operator is not coercive (mu={mu:.3e})")
        certificate = Certificate(mu, max(lip, mu))
    zero = status == ZERO
    nonneg = status == NONNEG
    nonpos = status == NONPOS
    if not (nonneg.any() or nonpos.any()):
        return _solve_on_pattern(B, h, zero)
    # PDAS on the one-sided coordinates; sign = +1 (nonneg) / -1 (nonpos)
    sign = np.where(nonneg, 1.0, np.where(nonpos, -1.0, 0.0))
    one_sided = nonneg | nonpos
    clamp = zero.copy()
    seen = set()
    for _ in range(4 * h.size + 4):
        w = _solve_on_pattern(B, h, clamp)
        g = B @ w - h
        # clamped: w = 0, keep iff multiplier sign*g > 0; free: g = 0, clamp iff sign*w < 0
        new = zero | (one_sided & (sign * (g - w) > 0))
        key = new.tobytes()
        if np.array_equal(new, clamp):
            if _cone_kkt_ok(B, h, cone.status, w, 1e-10):
                return w
            break
        if key in seen:
            break
        seen.add(key)
        clamp = new
    # fallback: projected iteration, then exact solve on the identified pattern
    prob = ViProblem(space, LinearOperator(B, certificate), certificate, CoordCone(cone.status), h)
    w = solve_vi(prob, tol=tol).solution
    scale = max(np.max(np.abs(w)), 1e-300)
    clamp = zero | (one_sided & (np.abs(w) <= 1e-8 * scale))
    w_exact = _solve_on_pattern(B, h, clamp)
    if _cone_kkt_ok(B, h, cone.status, w_exact, 1e-10):
        return w_exact
    return w
