"""Dense and sparse linear algebra used by the assembly pipeline.

Thin wrappers over LAPACK (partial-pivoting LU) and SuperLU that add the
singularity reporting and triplet-assembly semantics the solvers rely on.
Factorizations are built once and reused for many right-hand sides.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    """Raised when a factorization meets a numerically singular matrix."""


_PIVOT_RTOL = 1e-13


class DenseFactor:
    """LU factorization with partial pivoting of a square dense matrix."""

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        self.shape = a.shape
        n = a.shape[0]
        if n == 0:
            self._lu = None
            return
        scale = float(np.abs(a).max())
        with warnings.catch_warnings():
            # the pivot check below reports singularity; keep LAPACK quiet
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self._lu = sla.lu_factor(a, check_finite=False)
        pivots = np.abs(np.diag(self._lu[0]))
        if scale == 0.0 or pivots.min() < _PIVOT_RTOL * scale:
            raise SingularMatrixError(
                f"dense factorization: pivot {pivots.min():.3e} below "
                f"{_PIVOT_RTOL:.0e} * max entry {scale:.3e}")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is None:
            return np.zeros_like(b)
        return sla.lu_solve(self._lu, b, check_finite=False)


def dense_solve(a, b):
    """Solve a dense system; raises SingularMatrixError when near-singular."""
    return DenseFactor(a).solve(b)


class SparseBuilder:
    """Triplet accumulator for a sparse matrix; duplicates sum on finalize."""

    def __init__(self, nrows, ncols):
        self.shape = (int(nrows), int(ncols))
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, rows, cols, vals):
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64)).ravel()
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64)).ravel()
        vals = np.atleast_1d(np.asarray(vals, dtype=float)).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ValueError("triplet arrays must have equal length")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def add_block(self, rows, cols, block):
        """Scatter a dense block: entry block[i, j] goes to (rows[i], cols[j])."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        block = np.asarray(block, dtype=float)
        if block.shape != (rows.size, cols.size):
            raise ValueError("block shape does not match index arrays")
        rr = np.repeat(rows, cols.size)
        cc = np.tile(cols, rows.size)
        self.add(rr, cc, block.ravel())

    def finalize(self):
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = np.zeros(0, dtype=np.int64)
            cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        if rows.size and (rows.min() < 0 or rows.max() >= self.shape[0]
                          or cols.min() < 0 or cols.max() >= self.shape[1]):
            raise ValueError("triplet index out of range")
        # sort by (row, col, value) so duplicate summation order does not
        # depend on insertion order
        order = np.lexsort((vals, cols, rows))
        mat = sp.coo_matrix(
            (vals[order], (rows[order], cols[order])), shape=self.shape
        ).tocsc()
        return SparseMatrix(mat)


class SparseMatrix:
    """Immutable CSC matrix with a factor-once solve interface."""

    def __init__(self, csc):
        self._mat = csc.tocsc()
        self.shape = self._mat.shape

    @property
    def nnz(self):
        return self._mat.nnz

    def toarray(self):
        return self._mat.toarray()

    def matvec(self, x):
        return self._mat @ x

    def __matmul__(self, x):
        return self._mat @ x

    def factor(self):
        return SparseFactor(self._mat)


class SparseFactor:
    """SuperLU factorization; solve() applies one refinement pass if needed."""

    def __init__(self, csc):
        self._mat = csc
        try:
            self._lu = spla.splu(csc)
        except RuntimeError as exc:
            raise SingularMatrixError(f"sparse factorization failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        resid = b - self._mat @ x
        rnorm = np.linalg.norm(resid)
        if rnorm > 1e-12 * bnorm:
            x = x + self._lu.solve(resid)
            rnorm = np.linalg.norm(b - self._mat @ x)
        if not np.isfinite(rnorm) or rnorm > 1e-6 * bnorm:
            raise SingularMatrixError(
                f"sparse solve residual {rnorm:.3e} exceeds 1e-6 * |b| "
                f"({bnorm:.3e}); matrix is numerically singular")
        return x


def sparse_solve(matrix, b):
    """Solve with a SparseMatrix (or SparseBuilder, finalized on the fly)."""
    if isinstance(matrix, SparseBuilder):
        matrix = matrix.finalize()
    return matrix.factor().solve(b)
