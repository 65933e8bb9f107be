"""Polyhedral convex sets, M-norm projections and the cones of convex analysis.

Only polyhedral sets are supported, so every set handled here is polyhedric
and the critical cone of a box is again a coordinate cone.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, InfeasibleError, InvalidMultiplier, ProjectionError

__all__ = [
    "FREE",
    "ZERO",
    "NONNEG",
    "NONPOS",
    "Box",
    "Translate",
    "Span",
    "CoordCone",
    "CriticalCone",
    "WholeSpace",
    "Ball",
    "BiactiveWarning",
    "as_box",
    "project",
    "contains",
    "critical_cone",
    "in_polar",
    "in_cone",
    "cone_generators",
]

FREE, ZERO, NONNEG, NONPOS = "free", "zero", "nonneg", "nonpos"
_STATUSES = (FREE, ZERO, NONNEG, NONPOS)


class BiactiveWarning(UserWarning):
    """Active constraint with vanishing multiplier (degenerate linearization)."""


@dataclass(frozen=True, eq=False)
class WholeSpace:
    pass


@dataclass(frozen=True, eq=False)
class Box:
    """``{x : lower <= x <= upper}``; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionError("box bounds must be 1-D arrays of equal length")
        if np.any(lower > upper):
            raise InfeasibleError("empty box: lower > upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, dim, lower=-np.inf, upper=np.inf):
        return cls(np.full(dim, float(lower)), np.full(dim, float(upper)))

    @property
    def dim(self):
        return self.lower.size


@dataclass(frozen=True, eq=False)
class Translate:
    """``base + offset``; the moving set ``K + Phi(y)``."""

    base: object
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))


@dataclass(frozen=True, eq=False)
class Span:
    basis: tuple

    def __post_init__(self):
        vecs = np.atleast_2d(np.asarray(self.basis, dtype=float))
        object.__setattr__(self, "basis", vecs)

    @property
    def matrix(self):
        """Basis vectors as columns."""
        return self.basis.T


@dataclass(frozen=True, eq=False)
class CoordCone:
    """Closed convex cone described coordinatewise by a status per axis."""

    status: tuple

    def __post_init__(self):
        status = tuple(str(s) for s in self.status)
        bad = [s for s in status if s not in _STATUSES]
        if bad:
            raise ValueError(f"unknown coordinate status {bad[0]!r}")
        object.__setattr__(self, "status", status)

    @property
    def dim(self):
        return len(self.status)

    def mask(self, which):
        return np.array([s == which for s in self.status], dtype=bool)

    def bounds(self):
        st = np.array(self.status)
        lower = np.where((st == ZERO) | (st == NONNEG), 0.0, -np.inf)
        upper = np.where((st == ZERO) | (st == NONPOS), 0.0, np.inf)
        return lower, upper


@dataclass(frozen=True, eq=False)
class CriticalCone(CoordCone):
    """Critical cone ``T_K(z) ∩ lam^⊥`` of a box, with activity diagnostics."""

    active: tuple = ()
    strongly_active: tuple = ()
    biactive: tuple = ()
    notes: tuple = field(default=())


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed M-norm ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")


def as_box(s, dim):
    """Express a box-like set (Box, CoordCone, WholeSpace, translated box) as a Box."""
    if isinstance(s, Box):
        if s.dim != dim:
            raise DimensionError("box dimension mismatch")
        return s
    if isinstance(s, WholeSpace):
        return Box.uniform(dim)
    if isinstance(s, CoordCone):
        return Box(*s.bounds())
    if isinstance(s, Translate):
        base = as_box(s.base, dim)
        return Box(base.lower + s.offset, base.upper + s.offset)
    raise TypeError(f"{type(s).__name__} is not a box")


# -- projections ---------------------------------------------------------


def _pdas_box(space, lower, upper, x, target, eps):
    """Primal-dual active set for min 1/2|p-x|_M^2 on a box; None on cycling.

    Bound tests use a dead band ``eps`` so rounding noise on degenerate
    coordinates cannot flip the active set back and forth.
    """
    n = space.dim
    d = space.diagonal()
    p = np.clip(x, lower, upper)
    eta = target - space.apply(p)
    seen = set()
    for _ in range(3 * n + 3):
        trial = p + eta / d
        at_low = trial < lower - eps
        at_up = trial > upper + eps
        key = (at_low.tobytes(), at_up.tobytes())
        if key in seen:
            return np.clip(p, lower, upper)
        seen.add(key)
        fixed = at_low | at_up
        free = np.flatnonzero(~fixed)
        p = np.where(at_low, lower, np.where(at_up, upper, 0.0))
        if free.size:
            rhs = (target - space.apply(p))[free]
            p[free] = space.principal_solve(free, rhs)
        eta = target - space.apply(p)
        eta[free] = 0.0
    return None


def _primal_active_set_box(space, lower, upper, x, target, scale):
    """Feasible primal active-set method; finite termination for SPD M."""
    n = space.dim
    tol = 1e-13 * scale
    p = np.clip(x, lower, upper)
    w_low = p <= lower
    w_up = (p >= upper) & ~w_low
    for _ in range(10 * n + 100):
        free = np.flatnonzero(~(w_low | w_up))
        q = p.copy()
        if free.size:
            base = np.where(w_low | w_up, p, 0.0)
            q[free] = space.principal_solve(free, (target - space.apply(base))[free])
        step = q - p
        lo_hit = (step < 0) & np.isfinite(lower)
        up_hit = (step > 0) & np.isfinite(upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.full(n, np.inf)
            ratio[lo_hit] = (lower[lo_hit] - p[lo_hit]) / step[lo_hit]
            ratio[up_hit] = (upper[up_hit] - p[up_hit]) / step[up_hit]
        ratio[w_low | w_up] = np.inf
        j = int(np.argmin(ratio))
        if ratio[j] < 1.0:
            p = p + max(ratio[j], 0.0) * step
            if lo_hit[j]:
                p[j] = lower[j]
                w_low[j] = True
            else:
                p[j] = upper[j]
                w_up[j] = True
            continue
        p = q
        eta = target - space.apply(p)
        viol = np.zeros(n)
        viol[w_low] = eta[w_low]  # should be <= 0
        viol[w_up] = -eta[w_up]  # should be <= 0
        j = int(np.argmax(viol))
        if viol[j] <= tol:
            return p
        w_low[j] = w_up[j] = False
    raise ProjectionError("primal active-set projection did not terminate")


def _project_box(space, lower, upper, x):
    if space.is_diagonal:
        return np.clip(x, lower, upper)
    if np.all(x >= lower) and np.all(x <= upper):
        return x.copy()
    target = space.apply(x)
    scale = max(np.max(np.abs(target)), 1e-300)
    eps = 1e-13 * max(np.max(np.abs(x)), 1e-300)
    p = _pdas_box(space, lower, upper, x, target, eps)
    if p is not None:
        # KKT: multiplier M(x - p) has the right sign on each bound, vanishes inside
        eta = target - space.apply(p)
        tol = 1e-10 * scale
        at_low = p <= lower + eps
        at_up = p >= upper - eps
        inner = ~(at_low | at_up)
        ok = (
            np.all(eta[at_low & ~at_up] <= tol)
            and np.all(eta[at_up & ~at_low] >= -tol)
            and np.all(np.abs(eta[inner]) <= tol)
        )
        if ok:
            return p
    return _primal_active_set_box(space, lower, upper, x, target, scale)


def project(space, s, x):
    """M-norm projection of ``x`` onto the closed convex set ``s``."""
    x = space.check(x)
    if isinstance(s, WholeSpace):
        return x.copy()
    if isinstance(s, Translate):
        return project(space, s.base, x - s.offset) + s.offset
    if isinstance(s, (Box, CoordCone)):
        box = as_box(s, space.dim)
        return _project_box(space, box.lower, box.upper, x)
    if isinstance(s, Span):
        V = s.matrix
        if V.shape[0] != space.dim:
            raise DimensionError("span basis has the wrong length")
        MV = np.column_stack([space.apply(v) for v in V.T])
        coef = np.linalg.solve(V.T @ MV, MV.T @ x)
        return V @ coef
    if isinstance(s, Ball):
        diff = x - s.center
        r = space.norm(diff)
        if r <= s.radius:
            return x.copy()
        return s.center + (s.radius / r) * diff
    raise TypeError(f"cannot project onto {type(s).__name__}")


def contains(space, s, x, tol=1e-10):
    """Membership up to ``tol`` (relative to max(1, |x|_inf) for boxes)."""
    x = space.check(x)
    if isinstance(s, WholeSpace):
        return True
    if isinstance(s, Translate):
        return contains(space, s.base, x - s.offset, tol)
    if isinstance(s, (Box, CoordCone)):
        box = as_box(s, space.dim)
        slack = tol * max(1.0, np.max(np.abs(x)))
        return bool(np.all(x >= box.lower - slack) and np.all(x <= box.upper + slack))
    if isinstance(s, (Span, Ball)):
        return space.norm(x - project(space, s, x)) <= tol * max(1.0, space.norm(x))
    raise TypeError(f"cannot test membership in {type(s).__name__}")


# -- cones ---------------------------------------------------------------


def critical_cone(space, box, z, lam, tol_act=1e-8, tol_lam=1e-8):
    """Critical cone of a box at ``(z, lam)`` with ``lam`` in the normal cone.

    Tolerances are absolute after scaling ``z`` and ``lam`` by their max-norms.
    Biactive coordinates are classified one-sided and reported.
    """
    z = space.check(z)
    lam = space.check(lam, "multiplier")
    box = as_box(box, space.dim)
    zs = np.max(np.abs(z)) or 1.0
    ls = np.max(np.abs(lam)) or 1.0
    lo, up = box.lower, box.upper
    if np.any(z < lo - tol_act * zs) or np.any(z > up + tol_act * zs):
        raise InfeasibleError("z is not in the box")
    at_low = np.isfinite(lo) & (np.abs(z - lo) <= tol_act * zs)
    at_up = np.isfinite(up) & (np.abs(z - up) <= tol_act * zs)
    pos = lam > tol_lam * ls
    neg = lam < -tol_lam * ls
    status = []
    strong, biactive = [], []
    for i in range(space.dim):
        if at_low[i] and at_up[i]:
            status.append(ZERO)
            strong.append(i)
        elif at_low[i]:
            if pos[i]:
                raise InvalidMultiplier(f"multiplier positive at lower-active coordinate {i}")
            if neg[i]:
                status.append(ZERO)
                strong.append(i)
            else:
                status.append(NONNEG)
                biactive.append(i)
        elif at_up[i]:
            if neg[i]:
                raise InvalidMultiplier(f"multiplier negative at upper-active coordinate {i}")
            if pos[i]:
                status.append(ZERO)
                strong.append(i)
            else:
                status.append(NONPOS)
                biactive.append(i)
        else:
            if pos[i] or neg[i]:
                raise InvalidMultiplier(f"nonzero multiplier at inactive coordinate {i}")
            status.append(FREE)
    active = tuple(int(i) for i in np.flatnonzero(at_low | at_up))
    notes = ()
    if biactive:
        notes = (f"{len(biactive)} biactive coordinate(s)",)
        warnings.warn(f"biactive coordinates {biactive[:10]}", BiactiveWarning, stacklevel=2)
    return CriticalCone(
        status=tuple(status),
        active=active,
        strongly_active=tuple(strong),
        biactive=tuple(biactive),
        notes=notes,
    )


def cone_generators(cone):
    """Unit coordinate generators spanning a coordinate cone, as (index, sign) pairs."""
    gens = []
    for i, s in enumerate(cone.status):
        if s in (FREE, NONNEG):
            gens.append((i, 1.0))
        if s in (FREE, NONPOS):
            gens.append((i, -1.0))
    return gens


def in_polar(space, cone, g, tol=1e-8, scale=None):
    """Whether ``<g, v> <= tol * scale * |v|_M`` for every generator ``v`` of the cone.

    ``scale`` defaults to ``|g|_*``; pass the problem scale when ``g`` is
    expected to vanish.
    """
    g = space.check(g, "functional")
    scale = space.dual_norm(g) if scale is None else float(scale)
    enorm = np.sqrt(space.diagonal())
    for i, sign in cone_generators(cone):
        if sign * g[i] > tol * scale * enorm[i]:
            return False
    return True


def in_cone(cone, v, tol=1e-8, scale=None):
    """Coordinatewise membership with slack ``tol * scale``; ``scale`` defaults to |v|_inf."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cone.dim,):
        raise DimensionError("vector and cone dimensions differ")
    if scale is None:
        scale = np.max(np.abs(v)) if v.size else 0.0
    slack = tol * scale
    st = np.array(cone.status)
    if np.any(np.abs(v[st == ZERO]) > slack):
        return False
    if np.any(v[st == NONNEG] < -slack):
        return False
    if np.any(v[st == NONPOS] > slack):
        return False
    return True
