"""Dense symmetric kernels and sparse symmetric storage.

Everything downstream (solvers, preconditioners, the instance generator)
works with plain float64 numpy arrays for dense symmetric matrices and with
:class:`SparseSym` for sparse ones.  Block sizes stay in the low thousands,
so dense LAPACK eigendecomposition and Cholesky are the right tools; no
iterative eigensolvers are used anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefinite(Exception):
    """Raised when a Cholesky factorization hits a nonpositive pivot.

    ``pivot`` is the 0-based index of the failing pivot.  In the solvers this
    signals a step that left the cone or a stale preconditioner.
    """

    def __init__(self, pivot: int, context: str = ""):
        self.pivot = pivot
        msg = f"matrix not positive definite (pivot {pivot})"
        if context:
            msg += f" in {context}"
        super().__init__(msg)


class EigDecomp(NamedTuple):
    """Eigendecomposition A = Q diag(w) Q^T with w ascending."""

    w: np.ndarray
    q: np.ndarray


def sym(a: np.ndarray) -> np.ndarray:
    """Explicitly symmetrize, purging round-off asymmetry."""
    return 0.5 * (a + a.T)


def vec(m: np.ndarray) -> np.ndarray:
    """Row-major vectorization; for symmetric input either convention agrees."""
    return np.ascontiguousarray(m).reshape(-1)


def unvec(v: np.ndarray, m: int) -> np.ndarray:
    return v.reshape(m, m)


def sym_eig(a: np.ndarray) -> EigDecomp:
    """Full eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Raises a diagnostic ``np.linalg.LinAlgError`` on non-convergence, which
    for finite symmetric input does not happen in practice.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("sym_eig: input contains non-finite entries")
    w, q = np.linalg.eigh(sym(a))
    return EigDecomp(w, q)


def chol(a: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor L with L L^T = a.

    Raises :class:`NotPositiveDefinite` with the failing pivot index when the
    matrix is not positive definite.
    """
    a = np.asarray(a, dtype=float)
    c, info = lapack.dpotrf(a, lower=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1, context)
    if info < 0:
        raise ValueError(f"chol: illegal argument {-info}")
    return np.tril(c)


def is_pd(a: np.ndarray) -> bool:
    """True iff the symmetric matrix factors (strictly positive definite)."""
    try:
        chol(a)
        return True
    except NotPositiveDefinite:
        return False


def solve_lower(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L."""
    from scipy.linalg import solve_triangular

    return solve_triangular(l, b, lower=True)


def chol_solve(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the lower Cholesky factor."""
    from scipy.linalg import cho_solve

    return cho_solve((l, True), b)


def min_eig_pencil(x: np.ndarray, dx: np.ndarray) -> float:
    """Smallest eigenvalue of x^{-1} dx for positive definite x.

    Computed as lambda_min(L^{-1} dx L^{-T}) with x = L L^T, which keeps the
    problem symmetric.  Propagates :class:`NotPositiveDefinite` from the
    factorization of x.
    """
    l = chol(x, "min_eig_pencil")
    t = solve_lower(l, np.asarray(dx, dtype=float))
    t = solve_lower(l, t.T)
    return float(np.linalg.eigvalsh(sym(t))[0])


@dataclass(frozen=True)
class SparseSym:
    """Sparse symmetric matrix stored as the lower triangle (row >= col).

    Invariants: no duplicate coordinates, indices < dim.  Matvecs expand the
    stored triangle on the fly; duplicates are rejected at construction so
    the coordinate list stays canonical.
    """

    dim: int
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray

    @staticmethod
    def from_triplets(dim: int, row, col, val) -> "SparseSym":
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        val = np.asarray(val, dtype=float)
        if row.size:
            if row.max(initial=-1) >= dim or col.max(initial=-1) >= dim:
                raise ValueError("SparseSym: index out of range")
            if row.min(initial=0) < 0 or col.min(initial=0) < 0:
                raise ValueError("SparseSym: negative index")
        # normalize to lower triangle
        r = np.maximum(row, col)
        c = np.minimum(row, col)
        order = np.lexsort((c, r))
        r, c, val = r[order], c[order], val[order]
        if r.size > 1:
            dup = (r[1:] == r[:-1]) & (c[1:] == c[:-1])
            if dup.any():
                k = int(np.argmax(dup))
                raise ValueError(
                    f"SparseSym: duplicate entry at ({r[k + 1]}, {c[k + 1]})"
                )
        return SparseSym(dim, r, c, val)

    @property
    def nnz(self) -> int:
        return int(self.val.size)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        a[self.row, self.col] = self.val
        a[self.col, self.row] = self.val
        return a

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = np.zeros(self.dim)
        np.add.at(y, self.row, self.val * x[self.col])
        off = self.row != self.col
        np.add.at(y, self.col[off], self.val[off] * x[self.row[off]])
        return y

    def dot(self, m: np.ndarray) -> float:
        """Frobenius inner product with a dense symmetric matrix."""
        full = self.val * m[self.row, self.col]
        off = self.row != self.col
        return float(full.sum() + full[off].sum())

    def scaled(self, alpha: float) -> "SparseSym":
        return SparseSym(self.dim, self.row, self.col, alpha * self.val)

    def norm_fro(self) -> float:
        sq = self.val**2
        off = self.row != self.col
        return float(np.sqrt(sq.sum() + sq[off].sum()))
