"""Compressed-row sparse matrices and the differentiable sparse-dense product."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from radar.numerics.tensor import (
    NumericError,
    Operand,
    ShapeError,
    Tensor,
    apply_op,
    as_tensor,
)


def _frozen(values: np.ndarray, dtype: type) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, slots=True)
class SparseMatrix:
    """
    Sparse matrix in compressed-row storage.

    Column indices are strictly increasing within each row, so every
    (row, col) position appears at most once.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        indptr = _frozen(self.indptr, np.int64)
        indices = _frozen(self.indices, np.int64)
        values = _frozen(self.values, np.float64)

        if self.n_rows < 0 or self.n_cols < 0:
            raise ShapeError(f"negative shape ({self.n_rows}, {self.n_cols})")
        if indptr.shape != (self.n_rows + 1,):
            raise ShapeError(
                f"indptr must have {self.n_rows + 1} entries, got {indptr.shape[0]}"
            )
        if indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ShapeError("indptr must start at 0 and be non-decreasing")
        nnz = int(indptr[-1])
        if indices.shape != (nnz,) or values.shape != (nnz,):
            raise ShapeError(
                f"indices/values must have {nnz} entries, "
                f"got {indices.shape[0]}/{values.shape[0]}"
            )
        if nnz and (indices.min() < 0 or indices.max() >= self.n_cols):
            raise ShapeError(f"column index out of range for {self.n_cols} columns")
        if nnz > 1:
            step = np.diff(indices)
            row_starts = np.zeros(nnz, dtype=bool)
            row_starts[indptr[1:-1][indptr[1:-1] < nnz]] = True
            if np.any((step <= 0) & ~row_starts[1:]):
                raise ShapeError("column indices must strictly increase within a row")
        if not np.all(np.isfinite(values)):
            raise NumericError("sparse matrix values must be finite")

        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_coo(
        cls,
        n_rows: int,
        n_cols: int,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray | None = None,
    ) -> SparseMatrix:
        """Build from coordinate triples; duplicate positions are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ShapeError("rows and cols must have the same length")
        vals = (
            np.ones(rows.shape[0], dtype=np.float64)
            if values is None
            else np.asarray(values, dtype=np.float64)
        )
        if vals.shape != rows.shape:
            raise ShapeError("values must match the number of coordinates")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ShapeError(f"row index out of range for {n_rows} rows")

        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.size, dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        return cls(n_rows, n_cols, indptr, cols, vals)

    @classmethod
    def identity(cls, n: int) -> SparseMatrix:
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> SparseMatrix:
        empty = np.zeros(0, dtype=np.int64)
        return cls(
            n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), empty, np.zeros(0)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def row_of_entry(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.indptr))

    def with_values(self, values: np.ndarray) -> SparseMatrix:
        """Same sparsity pattern, new stored values."""
        return SparseMatrix(self.n_rows, self.n_cols, self.indptr, self.indices, values)

    def transpose(self) -> tuple[SparseMatrix, np.ndarray]:
        """
        Return (Aᵀ, perm) where ``Aᵀ.values == A.values[perm]``.

        The permutation lets callers carry per-entry tensors (masks,
        differentiable weights) across the transpose.
        """
        rows = self.row_of_entry()
        perm = np.lexsort((rows, self.indices))
        indptr = np.zeros(self.n_cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.indices, minlength=self.n_cols), out=indptr[1:])
        transposed = SparseMatrix(
            self.n_cols, self.n_rows, indptr, rows[perm], self.values[perm]
        )
        return transposed, perm

    def to_scipy(self, values: np.ndarray | None = None) -> sps.csr_matrix:
        data = self.values if values is None else values
        return sps.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n_rows, self.n_cols)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()


def spmm(matrix: SparseMatrix, dense: Operand, values: Tensor | None = None) -> Tensor:
    """
    Sparse-dense product ``A @ X``.

    Args:
        matrix: Sparse operand with ``n_cols`` equal to the rows of ``dense``
        dense: Dense ``m x d`` operand
        values: Optional per-entry tensor replacing ``matrix.values``; when it
            requires a gradient, the product is differentiable in it too

    Returns:
        Dense ``n x d`` tensor

    Raises:
        ShapeError: If dimensions do not line up
        NumericError: If the product contains NaN or infinity
    """
    x = as_tensor(dense)
    if x.ndim != 2 or x.shape[0] != matrix.n_cols:
        raise ShapeError(
            f"spmm shape mismatch: {matrix.shape} @ {x.shape}"
        )
    if values is not None and values.shape != (matrix.nnz,):
        raise ShapeError(
            f"values must have shape ({matrix.nnz},), got {values.shape}"
        )

    csr = matrix.to_scipy(None if values is None else values.data)
    out = np.asarray(csr @ x.data)

    def _back(g: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        grad_x = np.asarray(csr.T @ g)
        grad_values = None
        if values is not None and values.requires_grad:
            rows = matrix.row_of_entry()
            grad_values = np.einsum("ij,ij->i", g[rows], x.data[matrix.indices])
        return grad_x, grad_values

    parents = (x,) if values is None else (x, values)
    return apply_op(out, parents, _back, "spmm")
