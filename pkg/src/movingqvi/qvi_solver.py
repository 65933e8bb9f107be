"""Moving-set QVIs

    find y in K + Phi(y) with  <A(y) - f, v - y> >= 0  for all v in K + Phi(y),

solved through the change of variables z = y - Phi(y), which turns the QVI into
a VI over the fixed set K for B = A o (I - Phi)^{-1}.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConditionViolated, MaxIterations
from .operators import (
    Certificate,
    ComposedOperator,
    ZeroMap,
    check_uniqueness,
    composed_constants,
    invert_i_minus_phi,
    localized_map,
    measured_certificate,
)
from .sets import Translate, project
from .vi_solver import SolveReport, ViProblem, solve_vi

__all__ = [
    "QviProblem",
    "QviSolution",
    "qvi_residual",
    "composed_certificate",
    "solve_qvi",
    "solve_qvi_sequential",
    "solve_qvi_localized",
]

# dense eigen-decompositions above this size are too slow for "auto"
_MEASURE_LIMIT = 1200


@dataclass(frozen=True, eq=False)
class QviProblem:
    space: object
    a_op: object
    phi: object
    set_k: object
    f: np.ndarray
    region: object = None

    def __post_init__(self):
        object.__setattr__(self, "f", self.space.check(self.f, "f"))

    def with_f(self, f):
        return replace(self, f=np.asarray(f, dtype=float))

    def moving_set(self, y):
        return Translate(self.set_k, self.phi(y))


@dataclass
class QviSolution:
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    vi_report: SolveReport
    qvi_residual: float
    certificate: Certificate = None
    outer_iterations: int = None
    inside_region: bool = None
    lip_phi: float = 0.0

    @property
    def y_error_bound(self):
        """Bound on |y - y*|_M implied by the VI error bound."""
        return self.vi_report.error_bound / max(1.0 - self.lip_phi, 1e-300)


def qvi_residual(p, y, inner_tol=1e-14):
    """``|y - Proj_{Q(y)}(y - tau_A R(A(y) - f))|_M`` with ``tau_A = mu_A / L_A^2``."""
    cert = p.a_op.certificate
    tau = cert.mu / cert.lip**2
    grad = p.space.riesz(p.a_op(y) - p.f)
    return p.space.norm(y - project(p.space, p.moving_set(y), y - tau * grad))


def composed_certificate(p, constants="auto"):
    """Certificate used for the reformulated VI.

    ``constants`` is ``"formula"`` (bounds from the A and Phi certificates),
    ``"measured"`` (exact constants of the explicit matrix; linear data only),
    an explicit :class:`Certificate`, or ``"auto"``: the A certificate when
    Phi vanishes, measured constants for small linear problems, else formula.
    """
    report = check_uniqueness(p.a_op.certificate, p.phi.lip)
    if isinstance(constants, Certificate):
        return constants
    linear = p.a_op.is_linear and p.phi.is_linear
    if constants == "auto":
        if isinstance(p.phi, ZeroMap):
            return p.a_op.certificate
        constants = "measured" if linear and p.space.dim <= _MEASURE_LIMIT else "formula"
    if not report.unique:
        msg = f"uniqueness conditions fail (gamma={report.gamma:g}, Lip(Phi)={p.phi.lip:g})"
        if linear and p.space.dim <= _MEASURE_LIMIT:
            try:
                measured_certificate(p.space, p.a_op, p.phi)
            except ConditionViolated as exc:
                msg = f"{exc}; {msg}"
        raise ConditionViolated(msg)
    if constants == "formula":
        return composed_constants(p.a_op.certificate, p.phi.lip)
    if constants == "measured":
        return measured_certificate(p.space, p.a_op, p.phi)
    raise ValueError(f"unknown constants option {constants!r}")


def _finish(p, y, z, report, cert, **extra):
    lam = p.f - p.a_op(y)
    return QviSolution(
        y=y,
        z=z,
        lam=lam,
        vi_report=report,
        qvi_residual=qvi_residual(p, y),
        certificate=cert,
        lip_phi=p.phi.lip,
        **extra,
    )


def solve_qvi(p, tol=1e-10, constants="auto", max_iter=200_000, z0=None):
    """Solve the QVI through the VI for ``z = y - Phi(y)`` and recover ``y``."""
    cert = composed_certificate(p, constants)
    b_op = ComposedOperator(p.a_op, p.phi, p.space)
    vi = ViProblem(p.space, b_op, cert, p.set_k, p.f)
    report = solve_vi(vi, tol=tol, max_iter=max_iter, z0=z0)
    z = report.solution
    y = invert_i_minus_phi(p.phi, z, space=p.space, tol=tol * 1e-3)
    return _finish(p, y, z, report, cert)


def solve_qvi_sequential(p, tol=1e-10, max_outer=10_000, y0=None):
    """Picard iteration ``y_{k+1} = VI solution over K + Phi(y_k)`` with operator A.

    Stops when ``|y_{k+1} - y_k|_M <= tol``. Independent of the reformulation.
    """
    check = check_uniqueness(p.a_op.certificate, p.phi.lip)
    if not check.unique:
        raise ConditionViolated("uniqueness conditions fail for the sequential scheme")
    cert = p.a_op.certificate
    y = np.zeros(p.space.dim) if y0 is None else np.asarray(y0, dtype=float)
    inner_tol = tol * 1e-2
    step = math.inf
    report = None
    for k in range(1, max_outer + 1):
        vi = ViProblem(p.space, p.a_op, cert, p.moving_set(y), p.f)
        report = solve_vi(vi, tol=inner_tol, z0=y)
        y_new = report.solution
        step = p.space.norm(y_new - y)
        y = y_new
        if isinstance(p.phi, ZeroMap) or step <= tol:
            z = y - p.phi(y)
            return _finish(p, y, z, report, cert, outer_iterations=k)
    raise MaxIterations(
        f"sequential scheme: last outer step {step:.3e} > {tol:g} after {max_outer} iterations",
        report,
    )


def solve_qvi_localized(p, tol=1e-10, max_iter=200_000):
    """Solve the QVI with ``Phi o Proj_Y``; ``inside_region`` certifies the result.

    Only when the solution lies in the interior of ``Y`` is it the unique
    solution of the original problem in ``Y``.
    """
    if p.region is None:
        raise ValueError("localized solve needs a region")
    phi_tilde = localized_map(p.space, p.phi, p.region)
    mod = replace(p, phi=phi_tilde)
    cert = composed_certificate(mod, "formula")
    b_op = ComposedOperator(p.a_op, phi_tilde, p.space)
    report = solve_vi(ViProblem(p.space, b_op, cert, p.set_k, p.f), tol=tol, max_iter=max_iter)
    z = report.solution
    y = invert_i_minus_phi(phi_tilde, z, space=p.space, tol=tol * 1e-3)
    dist = p.space.norm(y - p.region.center)
    inside = bool(dist < p.region.radius - tol)
    return _finish(mod, y, z, report, cert, inside_region=inside)
