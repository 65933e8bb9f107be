"""Finite-dimensional Hilbert spaces R^n with an explicit Gram matrix.

Primal vectors and functionals are both plain 1-D numpy arrays. A functional
``f`` acts on a primal vector ``v`` by the coordinate dot product ``f @ v``;
the Gram matrix ``M`` induces the inner product ``u @ M @ v`` and the Riesz
map ``f -> M^{-1} f``.
"""

from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exceptions import DimensionError, FactorizationError

__all__ = [
    "Space",
    "inner",
    "norm",
    "riesz",
    "dual_norm",
    "stiffness_space",
    "load_vector",
]

_SYM_RTOL = 1e-12
_MAX_DENSE = 5000


def _bandwidth(mat):
    coo = mat.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row - coo.col)))


class Space:
    """R^n with inner product ``<u, v>_M = u^T M v``.

    Parameters
    ----------
    gram : array_like or scipy.sparse matrix, optional
        Symmetric positive-definite Gram matrix. ``None`` means the identity.
    dim : int, optional
        Required when ``gram`` is None.

    Banded sparse Grams (bandwidth <= 8) are kept in LAPACK band storage and
    factorized with a banded Cholesky; everything else is held dense.
    """

    _BAND_LIMIT = 8

    def __init__(self, gram=None, dim=None):
        self._dense = None
        self._band = None  # upper band storage, shape (b + 1, n)
        self._bw = None
        if gram is None:
            if dim is None or int(dim) < 1:
                raise DimensionError("identity space needs a positive dim")
            self.dim = int(dim)
            self.is_identity = True
            return
        self.is_identity = False
        if sp.issparse(gram):
            gram = sp.csr_matrix(gram, dtype=float)
            n = gram.shape[0]
            if gram.shape != (n, n):
                raise DimensionError("gram must be square")
            asym = abs(gram - gram.T).max() if gram.nnz else 0.0
            scale = abs(gram).max() if gram.nnz else 1.0
            if asym > _SYM_RTOL * scale:
                raise FactorizationError("gram is not symmetric")
            bw = _bandwidth(gram)
            if bw <= self._BAND_LIMIT:
                self._bw = bw
                band = np.zeros((bw + 1, n))
                for d in range(bw + 1):
                    band[bw - d, d:] = gram.diagonal(d)
                self._band = band
                self._sparse = gram
            else:
                gram = gram.toarray()
        if self._band is None:
            gram = np.array(gram, dtype=float)
            if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
                raise DimensionError("gram must be square")
            if gram.shape[0] > _MAX_DENSE:
                raise DimensionError(f"dense gram limited to dim <= {_MAX_DENSE}")
            scale = np.max(np.abs(gram)) or 1.0
            if np.max(np.abs(gram - gram.T)) > _SYM_RTOL * scale:
                raise FactorizationError("gram is not symmetric")
            self._dense = gram
        self.dim = self._band.shape[1] if self._band is not None else self._dense.shape[0]
        # factor eagerly so that an indefinite gram fails at construction
        self._factor

    # -- representation -------------------------------------------------

    @property
    def is_banded(self):
        return self._band is not None

    @property
    def is_diagonal(self):
        return self.is_identity or (self._band is not None and self._bw == 0)

    def gram_matrix(self):
        """The Gram matrix, sparse for banded and identity spaces."""
        if self.is_identity:
            return sp.identity(self.dim, format="csr")
        if self._band is not None:
            return self._sparse
        return self._dense

    def gram_dense(self):
        if self.is_identity:
            return np.eye(self.dim)
        if self._band is not None:
            return self._sparse.toarray()
        return self._dense

    def diagonal(self):
        if self.is_identity:
            return np.ones(self.dim)
        if self._band is not None:
            return self._band[-1].copy()
        return np.diag(self._dense).copy()

    @cached_property
    def _factor(self):
        try:
            if self._band is not None:
                return sla.cholesky_banded(self._band, lower=False)
            if self._dense is not None:
                return sla.cho_factor(self._dense, lower=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FactorizationError(f"gram is not positive definite: {exc}") from None
        return None

    @cached_property
    def whitener(self):
        """Dense lower-triangular ``C`` with ``M = C C^T``."""
        if self.is_identity:
            return np.eye(self.dim)
        try:
            return np.linalg.cholesky(self.gram_dense())
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(str(exc)) from None

    # -- algebra --------------------------------------------------------

    def check(self, v, what="vector"):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise DimensionError(f"{what} has shape {v.shape}, expected ({self.dim},)")
        return v

    def apply(self, u):
        """``M u``: the functional represented by the primal vector ``u``."""
        u = np.asarray(u, dtype=float)
        if self.is_identity:
            return u.copy()
        if self._band is not None:
            return self._sparse @ u
        return self._dense @ u

    def inner(self, u, v):
        u = self.check(u)
        v = self.check(v)
        return float(u @ self.apply(v))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def riesz(self, f):
        """Solve ``M r = f``."""
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.dim:
            raise DimensionError(f"functional has length {f.shape[0]}, expected {self.dim}")
        if self.is_identity:
            return f.copy()
        if self._band is not None:
            return sla.cho_solve_banded((self._factor, False), f)
        return sla.cho_solve(self._factor, f)

    def dual_norm(self, f):
        f = self.check(f, "functional")
        return float(np.sqrt(max(f @ self.riesz(f), 0.0)))

    def principal_solve(self, idx, rhs):
        """Solve ``M[idx, idx] x = rhs`` for a sorted index array ``idx``."""
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros(0)
        if self.is_identity:
            return np.array(rhs, dtype=float)
        try:
            if self._band is not None:
                bw = self._bw
                m = idx.size
                sub = np.zeros((bw + 1, m))
                sub[bw] = self._band[bw, idx]
                for d in range(1, bw + 1):
                    gap = idx[d:] - idx[:-d]
                    ok = gap <= bw
                    vals = np.zeros(m - d)
                    vals[ok] = self._band[bw - gap[ok], idx[d:][ok]]
                    sub[bw - d, d:] = vals
                return sla.solveh_banded(sub, rhs, lower=False)
            block = self._dense[np.ix_(idx, idx)]
            return sla.cho_solve(sla.cho_factor(block, lower=True), rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FactorizationError(str(exc)) from None

    def __repr__(self):
        kind = "identity" if self.is_identity else ("banded" if self.is_banded else "dense")
        return f"Space(dim={self.dim}, {kind})"


def inner(space, u, v):
    return space.inner(u, v)


def norm(space, u):
    return space.norm(u)


def riesz(space, f):
    return space.riesz(f)


def dual_norm(space, f):
    return space.dual_norm(f)


def stiffness_space(n):
    """H^1_0(0, 1) with P1 elements on ``n`` interior nodes, mesh width 1/(n+1)."""
    if n < 1:
        raise DimensionError("need at least one interior node")
    h = 1.0 / (n + 1)
    main = np.full(n, 2.0 / h)
    off = np.full(n - 1, -1.0 / h)
    return Space(sp.diags([off, main, off], [-1, 0, 1], format="csr"))


def grid_points(n):
    return np.arange(1, n + 1) / (n + 1)


def load_vector(n, value=1.0):
    """Consistent P1 load vector of a function on the uniform grid.

    ``value`` is a constant or a callable of x; callables are integrated with
    the trapezoidal-on-hat (lumped) rule, exact for constants.
    """
    h = 1.0 / (n + 1)
    if callable(value):
        return h * np.asarray(value(grid_points(n)), dtype=float)
    return np.full(n, h * float(value))
