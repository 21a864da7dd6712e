"""Compressed sparse row matrices and the handful of kernels the loss needs.

Every summing matrix, scaled summing matrix and reconciliation matrix in the
package is a :class:`SparseMatrix`. Dense operands are plain 2-D ``float64``
numpy arrays.

Products run in numba with a fixed summation order inside each output row, so
results are bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

__all__ = [
    "SparseMatrix",
    "from_triplets",
    "from_dense",
    "identity",
    "spmm_dense",
    "spmm_sparse",
    "transpose",
    "row_sums",
    "scale_rows",
    "scale_cols",
    "to_dense",
    "sparsity",
    "write_matrix_market",
]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical CSR matrix of 64-bit floats.

    Column indices are strictly increasing within each row and no explicit
    zeros are stored. Instances are treated as immutable.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro, ci, va = self.row_offsets, self.col_indices, self.values
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0 or ro[-1] != ci.size:
            raise ValueError("row_offsets must have n_rows+1 entries from 0 to nnz")
        if ci.size != va.size:
            raise ValueError("col_indices and values differ in length")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        for a in (ro, ci, va):
            a.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return spmm_sparse(self, other)
        return spmm_dense(self, other)

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def T(self) -> "SparseMatrix":
        return transpose(self)

    def toarray(self) -> np.ndarray:
        return to_dense(self)

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _csr(n_rows, n_cols, row_offsets, col_indices, values) -> SparseMatrix:
    return SparseMatrix(
        int(n_rows),
        int(n_cols),
        np.ascontiguousarray(row_offsets, dtype=np.int64),
        np.ascontiguousarray(col_indices, dtype=np.int64),
        np.ascontiguousarray(values, dtype=np.float64),
    )


def from_triplets(rows, cols, vals, shape) -> SparseMatrix:
    """Build a canonical matrix from (row, col, value) triplets.

    Duplicates are summed in input order and resulting zeros are dropped.
    """
    n_rows, n_cols = (int(s) for s in shape)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    if not (rows.size == cols.size == vals.size):
        raise ValueError("rows, cols and vals must have equal length")
    if rows.size:
        bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise IndexError(
                f"triplet {k} at ({rows[k]}, {cols[k]}) is outside shape {n_rows}x{n_cols}"
            )
    keys = rows * n_cols + cols
    uniq, inverse = np.unique(keys, return_inverse=True)
    summed = np.bincount(inverse, weights=vals, minlength=uniq.size)
    keep = summed != 0.0
    uniq, summed = uniq[keep], summed[keep]
    r = uniq // n_cols if n_cols else uniq
    c = uniq - r * n_cols
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
    return _csr(n_rows, n_cols, offsets, c, summed)


def from_dense(a) -> SparseMatrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array")
    r, c = np.nonzero(a)
    return from_triplets(r, c, a[r, c], a.shape)


def identity(n: int) -> SparseMatrix:
    idx = np.arange(n, dtype=np.int64)
    return _csr(n, n, np.arange(n + 1), idx, np.ones(n))


def to_dense(a: SparseMatrix) -> np.ndarray:
    out = np.zeros(a.shape, dtype=np.float64)
    out[a.row_indices(), a.col_indices] = a.values
    return out


def transpose(a: SparseMatrix) -> SparseMatrix:
    rows = a.row_indices()
    # stable sort keeps original row order within each new row
    order = np.argsort(a.col_indices, kind="stable")
    offsets = np.zeros(a.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(a.col_indices, minlength=a.n_cols), out=offsets[1:])
    return _csr(a.n_cols, a.n_rows, offsets, rows[order], a.values[order])


@njit(cache=True)
def _row_sums(indptr, data, out):
    for i in range(out.shape[0]):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * 1.0
        out[i] = s


def row_sums(a: SparseMatrix) -> np.ndarray:
    out = np.empty(a.n_rows, dtype=np.float64)
    _row_sums(a.row_offsets, a.values, out)
    return out


def _check_scale(v, n, what):
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != n:
        raise ShapeError(f"{what} scale vector has length {v.size}, expected {n}")
    if np.any(v == 0.0):
        raise ZeroDivisionError(f"{what} scale vector contains zeros")
    return v


def scale_rows(a: SparseMatrix, v) -> SparseMatrix:
    """Entry (i, j) multiplied by ``v[i]``; sparsity pattern unchanged."""
    v = _check_scale(v, a.n_rows, "row")
    return _csr(a.n_rows, a.n_cols, a.row_offsets, a.col_indices, a.values * v[a.row_indices()])


def scale_cols(a: SparseMatrix, v) -> SparseMatrix:
    """Entry (i, j) multiplied by ``v[j]``; sparsity pattern unchanged."""
    v = _check_scale(v, a.n_cols, "column")
    return _csr(a.n_rows, a.n_cols, a.row_offsets, a.col_indices, a.values * v[a.col_indices])


@njit(cache=True)
def _csr_dense(indptr, indices, data, b, out):
    n_rows = indptr.shape[0] - 1
    k = b.shape[1]
    for i in range(n_rows):
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(k):
                out[i, c] += a * b[j, c]


def spmm_dense(a: SparseMatrix, b) -> np.ndarray:
    """Sparse times dense, O(nnz(a) * b.shape[1])."""
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != a.n_cols:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.n_rows, b.shape[1]), dtype=np.float64)
    _csr_dense(a.row_offsets, a.col_indices, a.values, np.ascontiguousarray(b), out)
    return out[:, 0] if vector else out


@njit(cache=True)
def _gustavson_count(a_ptr, a_idx, b_ptr, b_idx, n_cols):
    n_rows = a_ptr.shape[0] - 1
    mark = np.full(n_cols, -1, dtype=np.int64)
    counts = np.zeros(n_rows, dtype=np.int64)
    for i in range(n_rows):
        c = 0
        for p in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[p]
            for q in range(b_ptr[k], b_ptr[k + 1]):
                j = b_idx[q]
                if mark[j] != i:
                    mark[j] = i
                    c += 1
        counts[i] = c
    return counts


@njit(cache=True)
def _gustavson_fill(a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, n_cols, out_ptr, out_idx, out_val):
    n_rows = a_ptr.shape[0] - 1
    acc = np.zeros(n_cols, dtype=np.float64)
    mark = np.full(n_cols, -1, dtype=np.int64)
    for i in range(n_rows):
        start = out_ptr[i]
        c = start
        for p in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[p]
            av = a_val[p]
            for q in range(b_ptr[k], b_ptr[k + 1]):
                j = b_idx[q]
                if mark[j] != i:
                    mark[j] = i
                    out_idx[c] = j
                    c += 1
                acc[j] += av * b_val[q]
        out_idx[start:c] = np.sort(out_idx[start:c])
        for t in range(start, c):
            j = out_idx[t]
            out_val[t] = acc[j]
            acc[j] = 0.0


def spmm_sparse(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Sparse times sparse (row-by-row Gustavson product)."""
    if a.n_cols != b.n_rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    counts = _gustavson_count(a.row_offsets, a.col_indices, b.row_offsets, b.col_indices, b.n_cols)
    ptr = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    idx = np.empty(ptr[-1], dtype=np.int64)
    val = np.empty(ptr[-1], dtype=np.float64)
    _gustavson_fill(
        a.row_offsets, a.col_indices, a.values,
        b.row_offsets, b.col_indices, b.values,
        b.n_cols, ptr, idx, val,
    )
    if np.any(val == 0.0):
        # cancellation produced explicit zeros; re-canonicalize
        rows = np.repeat(np.arange(a.n_rows), counts)
        return from_triplets(rows, idx, val, (a.n_rows, b.n_cols))
    return _csr(a.n_rows, b.n_cols, ptr, idx, val)


def sparsity(a: SparseMatrix) -> float:
    """Fraction of entries that are zero, ``1 - nnz / (rows * cols)``."""
    total = a.n_rows * a.n_cols
    if total == 0:
        return 1.0
    return 1.0 - a.nnz / total


def write_matrix_market(a: SparseMatrix, path) -> None:
    """Debug dump in coordinate format with 1-based indices."""
    rows = a.row_indices()
    with Path(path).open("w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.n_rows} {a.n_cols} {a.nnz}\n")
        for r, c, v in zip(rows, a.col_indices, a.values):
            fh.write(f"{r + 1} {c + 1} {v!r}\n")
