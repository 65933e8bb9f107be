"""Operators A: V -> V*, moving maps Phi: V -> V and the composed operator
B = A o (I - Phi)^{-1}, with the constants that control them.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    ConditionViolated,
    DimensionError,
    MaxIterations,
    NotContraction,
    SingularLinearization,
)
from .sets import Ball, project

__all__ = [
    "Certificate",
    "LinearOperator",
    "NonlinearOperator",
    "ZeroMap",
    "ScalarMap",
    "LinearMap",
    "NonlinearMap",
    "ThresholdReport",
    "ComposedOperator",
    "check_uniqueness",
    "composed_constants",
    "invert_i_minus_phi",
    "eval_B",
    "jacobian_B",
    "estimate_constants",
    "operator_norm",
    "measured_certificate",
    "check_interpolation_inequality",
    "localized_map",
]


@dataclass(frozen=True)
class Certificate:
    """Strong monotonicity modulus ``mu`` and Lipschitz constant ``lip``."""

    mu: float
    lip: float
    has_convex_potential: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lip < self.mu * (1 - 1e-12):
            raise ValueError(f"lip={self.lip} < mu={self.mu}")

    @property
    def gamma(self):
        return max(self.lip / self.mu, 1.0)


def _dense(mat):
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


# -- operators A ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearOperator:
    matrix: object
    certificate: Certificate

    def __post_init__(self):
        if self.certificate.has_convex_potential:
            m = self.matrix
            asym = abs(m - m.T).max()
            if asym > 1e-12 * max(abs(m).max(), 1.0):
                raise ValueError("operator with a convex potential must be symmetric")

    is_linear = True

    def __call__(self, y):
        return self.matrix @ y

    def jac(self, y=None):
        return self.matrix


@dataclass(frozen=True, eq=False)
class NonlinearOperator:
    fun: object
    jac_fun: object
    certificate: Certificate

    is_linear = False

    def __call__(self, y):
        return np.asarray(self.fun(y), dtype=float)

    def jac(self, y):
        return self.jac_fun(y)


# -- moving maps Phi -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZeroMap:
    region: Ball = None

    lip = 0.0
    is_linear = True

    def __call__(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def jac(self, y):
        n = np.asarray(y).size
        return np.zeros((n, n))


@dataclass(frozen=True, eq=False)
class ScalarMap:
    """``Phi = value * I``."""

    value: float
    region: Ball = None

    is_linear = True

    @property
    def lip(self):
        return abs(self.value)

    def __call__(self, y):
        return self.value * np.asarray(y, dtype=float)

    def jac(self, y):
        return self.value * np.eye(np.asarray(y).size)


@dataclass(frozen=True, eq=False)
class LinearMap:
    """``Phi(y) = matrix @ y`` with a certified Lipschitz constant (in the M-norm)."""

    matrix: object
    lip: float
    region: Ball = None

    is_linear = True

    def __call__(self, y):
        return self.matrix @ np.asarray(y, dtype=float)

    def jac(self, y):
        return _dense(self.matrix)

    @cached_property
    def _i_minus_factor(self):
        n = self.matrix.shape[0]
        if sp.issparse(self.matrix):
            return spla.splu(sp.csc_matrix(sp.identity(n) - self.matrix)).solve
        lu = sla.lu_factor(np.eye(n) - self.matrix)
        return lambda rhs: sla.lu_solve(lu, rhs)


@dataclass(frozen=True, eq=False)
class NonlinearMap:
    fun: object
    jac_fun: object
    lip: float
    region: Ball = None

    is_linear = False

    def __call__(self, y):
        return np.asarray(self.fun(y), dtype=float)

    def jac(self, y):
        return _dense(self.jac_fun(y))


def localized_map(space, phi, region):
    """``Phi o Proj_Y`` for a ball ``Y``; Lipschitz with the same constant."""

    def fun(y):
        return phi(project(space, region, y))

    def jac(y):
        # only meaningful in the interior of the region
        return phi.jac(project(space, region, y))

    return NonlinearMap(fun, jac, phi.lip, region=region)


# -- thresholds and constants -------------------------------------------


@dataclass(frozen=True)
class ThresholdReport:
    gamma: float
    lip_phi: float
    has_convex_potential: bool
    thresholds: dict
    holds: dict
    unique: bool
    ordering: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "lip_phi": self.lip_phi,
            "has_convex_potential": self.has_convex_potential,
            "thresholds": dict(self.thresholds),
            "holds": dict(self.holds),
            "unique": self.unique,
            "ordering": dict(self.ordering),
        }


def thresholds(gamma):
    """The four sufficient bounds on Lip(Phi) as functions of gamma = L/mu."""
    g = float(gamma)
    if g < 1:
        raise ValueError("gamma must be >= 1")
    return {
        "noor_oettli": 1.0 / (g * (g + math.sqrt(g * g - 1.0))),
        "nesterov_scrimali": 1.0 / g,
        "convex_potential": 2.0 * math.sqrt(g) / (1.0 + g),
        "ahr": 1.0 / (1.0 + g),
    }


def check_uniqueness(cert, lip_phi):
    """Evaluate the uniqueness thresholds at ``cert.gamma`` and compare ``lip_phi``."""
    if lip_phi < 0:
        raise ValueError("lip_phi must be nonnegative")
    th = thresholds(cert.gamma)
    holds = {k: bool(lip_phi < v) for k, v in th.items()}
    unique = holds["nesterov_scrimali"] or (
        holds["convex_potential"] and cert.has_convex_potential
    )
    ordering = {
        "noor_oettli<nesterov_scrimali": th["noor_oettli"] < th["nesterov_scrimali"],
        "nesterov_scrimali<convex_potential": th["nesterov_scrimali"] < th["convex_potential"],
        "ahr<nesterov_scrimali": th["ahr"] < th["nesterov_scrimali"],
        "ahr<noor_oettli": th["ahr"] < th["noor_oettli"],
    }
    return ThresholdReport(
        gamma=cert.gamma,
        lip_phi=float(lip_phi),
        has_convex_potential=cert.has_convex_potential,
        thresholds=th,
        holds=holds,
        unique=bool(unique),
        ordering=ordering,
    )


def composed_constants(cert, lip_phi):
    """Certificate (mu_B, L_B) for ``A o (I - Phi)^{-1}``.

    Uses the general bound when ``lip_phi < 1/gamma`` and the convex-potential
    bound when it applies; the larger modulus wins when both do.
    """
    mu, L, lp = cert.mu, cert.lip, float(lip_phi)
    candidates = []
    if lp < 1.0 / cert.gamma:
        candidates.append((mu - L * lp) / (1.0 + lp) ** 2)
    if cert.has_convex_potential and lp < 2.0 * math.sqrt(mu * L) / (mu + L):
        candidates.append(
            (4.0 * mu * L - lp**2 * (mu + L) ** 2) / (4.0 * (mu + L) * (1.0 + lp) ** 2)
        )
    if not candidates:
        raise ConditionViolated(
            f"lip_phi={lp:g} violates every uniqueness condition at gamma={cert.gamma:g}"
        )
    return Certificate(max(candidates), L / (1.0 - lp))


# -- (I - Phi)^{-1}, B and B' --------------------------------------------


def _norm(space, v):
    return float(np.linalg.norm(v)) if space is None else space.norm(v)


def invert_i_minus_phi(
    phi, z, space=None, tol=1e-12, max_iter=10_000, method="auto", x0=None, full_output=False
):
    """Solve ``x - Phi(x) = z``.

    ``method="picard"`` runs the Banach iteration ``x <- z + Phi(x)``; with
    ``"auto"`` linear maps are solved directly from a cached factorization.
    Returns ``x`` or, with ``full_output``, ``(x, iterations)``.
    """
    z = np.asarray(z, dtype=float)
    if phi.lip >= 1.0:
        raise NotContraction(f"Lip(Phi) = {phi.lip:g} >= 1")
    result = None
    if method == "auto":
        if isinstance(phi, ZeroMap):
            result = (z.copy(), 0)
        elif isinstance(phi, ScalarMap):
            result = (z / (1.0 - phi.value), 0)
        elif isinstance(phi, LinearMap):
            result = (phi._i_minus_factor(z), 0)
    elif method != "picard":
        raise ValueError(f"unknown method {method!r}")
    if result is None:
        x = z.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
        for k in range(1, max_iter + 1):
            x_new = z + phi(x)
            step = _norm(space, x_new - x)
            x = x_new
            # residual of the previous iterate equals the step
            if step <= tol:
                result = (x, k)
                break
        else:
            raise MaxIterations(f"(I - Phi)^-1 did not reach tol={tol:g} in {max_iter} steps")
    return result if full_output else result[0]


def eval_B(A, phi, z, space=None, tol=1e-12):
    return A(invert_i_minus_phi(phi, z, space=space, tol=tol))


def jacobian_B(A, phi, y_bar):
    """``A'(y) (I - Phi'(y))^{-1}`` as a dense matrix."""
    y_bar = np.asarray(y_bar, dtype=float)
    n = y_bar.size
    a_jac = _dense(A.jac(y_bar))
    i_minus = np.eye(n) - _dense(phi.jac(y_bar))
    try:
        inv = np.linalg.inv(i_minus)
    except np.linalg.LinAlgError:
        raise SingularLinearization("I - Phi'(y) is singular") from None
    if np.linalg.cond(i_minus) > 1e14:
        raise SingularLinearization("I - Phi'(y) is numerically singular")
    return a_jac @ inv


@dataclass(frozen=True, eq=False)
class ComposedOperator:
    """``B = A o (I - Phi)^{-1}`` as an evaluable operator."""

    A: object
    phi: object
    space: object = None

    def __call__(self, z, tol=1e-12):
        return eval_B(self.A, self.phi, z, space=self.space, tol=tol)

    def evaluate(self, z, tol):
        return self(z, tol=tol)

    def matrix(self):
        """Explicit matrix for linear A and Phi."""
        if not (self.A.is_linear and self.phi.is_linear):
            raise TypeError("explicit matrix only for linear A and Phi")
        n = self.space.dim
        return jacobian_B(self.A, self.phi, np.zeros(n))


# -- measured constants --------------------------------------------------


_COERCIVE_RTOL = 1e-12


def _whitened(space, linop):
    """``C^{-1} L C^{-T}`` for ``M = C C^T``."""
    mat = _dense(linop)
    if space is None or space.is_identity:
        return mat
    C = space.whitener
    tmp = sla.solve_triangular(C, mat, lower=True)
    return sla.solve_triangular(C, tmp.T, lower=True).T


def estimate_constants(space, linop):
    """Best (mu, L) of a linear map V -> V* in the M-geometry."""
    W = _whitened(space, linop)
    if W.shape[0] != W.shape[1]:
        raise DimensionError("linop must be square")
    mu = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0])
    lip = float(np.linalg.norm(W, 2))
    return mu, lip


def operator_norm(space, matrix):
    """M-norm operator norm of a linear map V -> V."""
    mat = _dense(matrix)
    if space is None or space.is_identity:
        return float(np.linalg.norm(mat, 2))
    C = space.whitener
    # ||C^T P C^{-T}||_2
    inner = sla.solve_triangular(C, (C.T @ mat).T, lower=True).T
    return float(np.linalg.norm(inner, 2))


def measured_certificate(space, A, phi):
    """Measured (mu_B, L_B) of ``A (I - Phi)^{-1}`` for linear A and Phi."""
    B = jacobian_B(A, phi, np.zeros(space.dim))
    mu, lip = estimate_constants(space, B)
    # a modulus at rounding level certifies nothing
    if mu <= _COERCIVE_RTOL * lip:
        raise ConditionViolated(f"non-coercive composed operator (measured mu_B={mu:.3e})")
    return Certificate(mu, max(lip, mu))


# -- interpolation inequality -------------------------------------------


def check_interpolation_inequality(space, A, samples):
    """Minimum slack of the co-coercivity inequality of a convex-potential gradient.

    ``samples`` is a sequence of ``(x1, x2)`` pairs or an ``(m, dim)`` array of
    points (all pairs are used). Negative slack is a finding, not an error.
    """
    cert = A.certificate
    if not cert.has_convex_potential:
        raise ValueError("inequality applies only to operators with a convex potential")
    mu, L = cert.mu, cert.lip
    arr = samples
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        arr = [(samples[i], samples[j]) for i in range(len(samples)) for j in range(i + 1, len(samples))]
    worst = np.inf
    for x1, x2 in arr:
        dx = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
        dg = A(x1) - A(x2)
        lhs = float(dg @ dx)
        rhs = mu * L / (mu + L) * space.inner(dx, dx) + space.dual_norm(dg) ** 2 / (mu + L)
        worst = min(worst, lhs - rhs)
    return float(worst)
