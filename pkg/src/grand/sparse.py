"""Sparse adjacency construction, normalization, and mixed-order propagation.

The graph operator used everywhere downstream is the self-loop-augmented
symmetric normalization S = D^{-1/2}(A + I)D^{-1/2}, applied through
repeated sparse-dense products so the averaged power series
(1/(K+1)) * sum_k S^k is never materialized as a dense matrix.

Dense matrices are plain C-contiguous float64 numpy arrays throughout;
`CsrMatrix` is the one custom container because its invariants (sorted,
deduplicated columns; consistent row offsets) are what the propagation
kernel relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as _sp

from .errors import IndexOutOfRange, InvalidParam, ShapeError, TooLarge

try:
    import numba as _numba

    @_numba.njit(parallel=True, cache=True)
    def _spmm_rows(row_ptr, col_idx, values, x, out):  # pragma: no cover - jitted
        for i in _numba.prange(len(row_ptr) - 1):
            for c in range(x.shape[1]):
                out[i, c] = 0.0
            for jj in range(row_ptr[i], row_ptr[i + 1]):
                v = values[jj]
                j = col_idx[jj]
                for c in range(x.shape[1]):
                    out[i, c] += v * x[j, c]

    @_numba.njit(parallel=True, cache=True)
    def _spmm_rows_acc(row_ptr, col_idx, values, x, out, total):  # pragma: no cover
        for i in _numba.prange(len(row_ptr) - 1):
            for c in range(x.shape[1]):
                out[i, c] = 0.0
            for jj in range(row_ptr[i], row_ptr[i + 1]):
                v = values[jj]
                j = col_idx[jj]
                for c in range(x.shape[1]):
                    out[i, c] += v * x[j, c]
            for c in range(x.shape[1]):
                total[i, c] += out[i, c]

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

# Dense matrices are bare float64 ndarrays; the alias documents intent.
DenseMatrix = np.ndarray

# Incremented once per sparse-dense product. Tests use it to verify that
# propagation with K steps performs exactly K kernel calls.
_SPMM_CALLS = 0


def spmm_call_count() -> int:
    return _SPMM_CALLS


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix with float64 values.

    Invariants (enforced by `validate`): row_ptr is nondecreasing with
    row_ptr[0] == 0 and row_ptr[-1] == nnz; column indices are strictly
    increasing within each row; all values are finite.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.values)

    def validate(self) -> "CsrMatrix":
        if self.n_rows < 0 or self.n_cols < 0:
            raise InvalidParam("negative dimensions")
        if len(self.row_ptr) != self.n_rows + 1:
            raise ShapeError("row_ptr length must be n_rows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ShapeError("row_ptr endpoints inconsistent with col_idx")
        if len(self.col_idx) != len(self.values):
            raise ShapeError("col_idx and values length mismatch")
        if np.any(np.diff(self.row_ptr) < 0):
            raise InvalidParam("row_ptr must be nondecreasing")
        if self.nnz and (self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols):
            raise IndexOutOfRange("column index out of range")
        if self.nnz > 1:
            row_ids = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
            same_row = row_ids[1:] == row_ids[:-1]
            if np.any(same_row & (np.diff(self.col_idx) <= 0)):
                raise InvalidParam("columns within a row must be strictly increasing")
        if self.nnz and not np.all(np.isfinite(self.values)):
            raise InvalidParam("non-finite value in matrix")
        return self

    def to_scipy(self) -> _sp.csr_matrix:
        """Zero-copy view as a scipy CSR matrix."""
        return _sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr),
            shape=(self.n_rows, self.n_cols),
            copy=False,
        )

    def row_slice(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]


def csr_from_coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray,
                 n_rows: int, n_cols: int) -> CsrMatrix:
    """Build a CsrMatrix from COO triplets; duplicates are not allowed."""
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
    return CsrMatrix(n_rows, n_cols,
                     row_ptr,
                     cols.astype(np.int64),
                     vals.astype(np.float64)).validate()


def build_adjacency(edges, n: int, symmetrize: bool = True) -> CsrMatrix:
    """Binary adjacency from an edge list.

    Duplicate input edges are collapsed and self-loops dropped (the
    normalization step re-adds exactly one self-loop per node). With
    `symmetrize`, every (u, v) also stores (v, u).
    """
    if n < 0:
        raise InvalidParam("node count must be nonnegative")
    arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise IndexOutOfRange(f"edge endpoint outside [0, {n})")
    src, dst = arr[:, 0], arr[:, 1]
    keep = src != dst
    src, dst = src[keep], dst[keep]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    # Dedup via linear encoding; n*n fits in int64 for any realistic graph.
    codes = np.unique(src * n + dst)
    rows, cols = codes // n, codes % n
    return csr_from_coo(rows, cols, np.ones(len(codes)), n, n)


def sym_normalize(adj: CsrMatrix) -> CsrMatrix:
    """Self-loop-augmented symmetric normalization of a binary adjacency.

    Adds the identity, then scales entry (i, j) by 1/sqrt(d_i * d_j)
    where d is the row sum including the self-loop. Symmetric pairs get
    bitwise-equal values because the product d_i * d_j commutes.
    """
    if adj.n_rows != adj.n_cols:
        raise ShapeError("adjacency must be square")
    if adj.nnz and not np.all(adj.values == 1.0):
        raise InvalidParam("adjacency must be binary")
    s = adj.to_scipy()
    if (s != s.T).nnz != 0:
        raise InvalidParam("adjacency must be symmetric")
    if s.diagonal().any():
        raise InvalidParam("adjacency must be self-loop-free")

    n = adj.n_rows
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(adj.row_ptr))
    rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([adj.col_idx, np.arange(n, dtype=np.int64)])
    deg = np.bincount(rows, minlength=n).astype(np.float64)  # includes self-loop
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return csr_from_coo(rows, cols, vals, n, n)


def spmm(a: CsrMatrix, x: DenseMatrix,
         accumulate_into: DenseMatrix | None = None) -> DenseMatrix:
    """Sparse-dense product A @ X.

    Within each row, contributions accumulate left-to-right in CSR order;
    rows may run in parallel. Output rows are independent, so results are
    bitwise reproducible at any thread count. When `accumulate_into` is
    given, the product is also added into it in the same pass (the
    propagation loop's running sum).
    """
    global _SPMM_CALLS
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"cannot multiply {a.n_rows}x{a.n_cols} by {x.shape}")
    _SPMM_CALLS += 1
    if _HAVE_NUMBA:
        out = np.empty((a.n_rows, x.shape[1]))
        x = np.ascontiguousarray(x)
        if accumulate_into is None:
            _spmm_rows(a.row_ptr, a.col_idx, a.values, x, out)
        else:
            _spmm_rows_acc(a.row_ptr, a.col_idx, a.values, x, out, accumulate_into)
        return out
    out = a.to_scipy() @ x
    if accumulate_into is not None:
        accumulate_into += out
    return out


def mixed_order_propagate(a_hat: CsrMatrix, x: DenseMatrix, k: int) -> DenseMatrix:
    """Average of propagated powers: (1/(K+1)) * sum_{j=0..K} A^j X.

    Runs exactly K sparse products against a running sum; the dense
    averaged operator is never formed.
    """
    if k < 0:
        raise InvalidParam("propagation step count must be >= 0")
    if a_hat.n_rows != a_hat.n_cols:
        raise ShapeError("propagation operator must be square")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a_hat.n_cols != x.shape[0]:
        raise ShapeError(f"cannot propagate {a_hat.n_rows}x{a_hat.n_cols} over {x.shape}")
    total = x.copy()
    cur = x
    for _ in range(k):
        cur = spmm(a_hat, cur, accumulate_into=total)
    total /= k + 1
    return total


def densify(a: CsrMatrix, guard: int = 10_000_000) -> DenseMatrix:
    """Exact dense copy; guarded so it stays a test-scale helper."""
    if a.n_rows * a.n_cols > guard:
        raise TooLarge(f"{a.n_rows}x{a.n_cols} exceeds densify guard")
    out = np.zeros((a.n_rows, a.n_cols))
    for i in range(a.n_rows):
        cols, vals = a.row_slice(i)
        out[i, cols] = vals
    return out
