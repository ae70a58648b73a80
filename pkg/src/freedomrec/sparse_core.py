"""Sparse/dense matrix primitives shared by every graph in the pipeline.

Dense matrices are plain ``float64`` numpy arrays. Sparse matrices use
:class:`CsrMatrix`, an immutable compressed-row container whose hot products
run through :mod:`freedomrec._backend`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from freedomrec._backend import kernels
from freedomrec.errors import DimensionError, DomainError, ParameterError


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CsrMatrix:
    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        object.__setattr__(self, "indptr", _frozen(self.indptr, np.int64))
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))
        object.__setattr__(self, "data", _frozen(self.data, np.float64))
        self.validate()

    def validate(self) -> None:
        rows, cols = self.shape
        ip, ix = self.indptr, self.indices
        if rows < 0 or cols < 0:
            raise DimensionError(f"negative shape {self.shape}")
        if len(ip) != rows + 1 or ip[0] != 0 or np.any(np.diff(ip) < 0):
            raise DimensionError("indptr must be non-decreasing, start at 0, length rows+1")
        if ip[-1] != len(ix) or len(ix) != len(self.data):
            raise DimensionError("indptr[-1], len(indices) and len(data) must agree")
        if len(ix):
            if ix.min() < 0 or ix.max() >= cols:
                raise DimensionError("column index out of range")
            # strictly increasing inside each row: a non-increase may only sit on a row boundary
            bad = np.flatnonzero(np.diff(ix) <= 0) + 1
            if len(bad) and not np.all(np.isin(bad, ip[1:-1])):
                raise DimensionError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("non-finite value in CSR data")

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_coo(cls, rows, cols, values, shape, *, sum_duplicates=True) -> CsrMatrix:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), rows.shape)
        n_rows, n_cols = shape
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise DimensionError("coordinate out of range")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows):
            key = rows * n_cols + cols
            first = np.concatenate(([True], key[1:] != key[:-1]))
            if not first.all():
                if not sum_duplicates:
                    raise DimensionError("duplicate coordinates")
                starts = np.flatnonzero(first)
                values = np.add.reduceat(values, starts)
                rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        return cls(shape, indptr, cols, values)

    @classmethod
    def from_dense(cls, a) -> CsrMatrix:
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n: int) -> CsrMatrix:
        return cls((n, n), np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> CsrMatrix:
        return cls((rows, cols), np.zeros(rows + 1, dtype=np.int64), [], [])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (COO row array)."""
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def with_data(self, data) -> CsrMatrix:
        return CsrMatrix(self.shape, self.indptr, self.indices, data)

    def scale(self, factor: float) -> CsrMatrix:
        return self.with_data(self.data * factor)

    def eliminate_zeros(self) -> CsrMatrix:
        keep = self.data != 0
        if keep.all():
            return self
        return CsrMatrix.from_coo(self.row_ids()[keep], self.indices[keep], self.data[keep], self.shape)

    def equals(self, other: CsrMatrix) -> bool:
        """Exact equality of structure and values."""
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )


def row_sums(s: CsrMatrix) -> np.ndarray:
    """Degree vector: sum of every row (0 for empty rows)."""
    return np.bincount(s.row_ids(), weights=s.data, minlength=s.shape[0]).astype(np.float64)


def spmm(s: CsrMatrix, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.ndim != 2 or s.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {s.shape} by {x.shape}")
    out = kernels.csr_spmm(s.indptr, s.indices, s.data, x)
    return out[:, 0] if squeeze else out


def transpose(s: CsrMatrix) -> CsrMatrix:
    rows = s.row_ids()
    # stable sort by column keeps the original row order, so new column indices stay increasing
    order = np.argsort(s.indices, kind="stable")
    indptr = np.zeros(s.shape[1] + 1, dtype=np.int64)
    np.cumsum(np.bincount(s.indices, minlength=s.shape[1]), out=indptr[1:])
    return CsrMatrix((s.shape[1], s.shape[0]), indptr, rows[order], s.data[order])


def add(a: CsrMatrix, b: CsrMatrix, wa: float = 1.0, wb: float = 1.0) -> CsrMatrix:
    """wa*a + wb*b on the union sparsity pattern."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    rows = np.concatenate((a.row_ids(), b.row_ids()))
    cols = np.concatenate((a.indices, b.indices))
    vals = np.concatenate((wa * a.data, wb * b.data))
    return CsrMatrix.from_coo(rows, cols, vals, a.shape)


def normalize_sym(s: CsrMatrix) -> CsrMatrix:
    """Return D^-1/2 S D^-1/2 with D the row-sum degree matrix.

    Empty rows stay empty. Non-negative input is required.
    """
    if s.shape[0] != s.shape[1]:
        raise DimensionError(f"normalize_sym needs a square matrix, got {s.shape}")
    if s.nnz and s.data.min() < 0:
        raise DomainError("normalize_sym requires non-negative entries")
    deg = row_sums(s)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    return s.with_data(s.data * inv_sqrt[s.row_ids()] * inv_sqrt[s.indices])


class EigenEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def dominant_eigenvalue(s: CsrMatrix, tol: float = 1e-8, max_iter: int = 1000, rng_seed: int = 0) -> EigenEstimate:
    """Perron root of a non-negative square matrix by shifted power iteration.

    Iterates with ``S + I`` so that periodic matrices (e.g. bipartite
    adjacencies, whose spectrum is symmetric about 0) still converge; the
    estimate is the Rayleigh quotient of ``S`` at the current iterate.

    The iterate stays strictly positive, so every step also yields the
    Collatz-Wielandt bracket ``min_i (Sx)_i/x_i <= lam <= max_i (Sx)_i/x_i``.
    Convergence is declared when that bracket is narrower than ``tol``, or,
    for reducible matrices whose bracket need not close, when the step
    ``|lam_t - lam_{t-1}|`` and its geometric-tail error estimate stay below
    ``tol`` for several consecutive iterations.
    """
    n, m = s.shape
    if n != m:
        raise DimensionError(f"dominant_eigenvalue needs a square matrix, got {s.shape}")
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if n == 0:
        return EigenEstimate(0.0, True, 0)
    if s.nnz and s.data.min() < 0:
        raise DomainError("dominant_eigenvalue expects a non-negative matrix")
    rng = np.random.default_rng(rng_seed)
    x = rng.uniform(0.5, 1.5, size=n)
    x /= np.linalg.norm(x)
    prev = np.inf
    steps: list[float] = []
    calm = 0
    lam = 0.0
    for it in range(1, max_iter + 1):
        sx = spmm(s, x)
        lam = float(x @ sx)
        ratios = sx / x
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo < tol:
            return EigenEstimate(min(max(lam, lo), hi), True, it)
        step = abs(lam - prev)
        steps = (steps + [step])[-4:]
        if step < tol and len(steps) > 1:
            r = max(b / a if a > 0 else 0.0 for a, b in zip(steps, steps[1:]))
            r = min(r, 0.999)
            calm = calm + 1 if step * r / (1.0 - r) < tol else 0
            if calm >= 5:
                return EigenEstimate(lam, True, it)
        else:
            calm = 0
        prev = lam
        y = sx + x
        x = y / np.linalg.norm(y)
    return EigenEstimate(lam, False, max_iter)


def top_k_per_row(scores: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest entries of each row.

    Ties are broken toward the smaller column index and each row of the result
    is ordered by descending score, then ascending index. Returns an
    ``(rows, min(k, cols))`` int64 array.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_rows, n_cols = scores.shape
    k = min(k, n_cols)
    if k <= 0:
        return np.empty((n_rows, 0), dtype=np.int64)
    if k == n_cols:
        chosen = np.ones_like(scores, dtype=bool)
    else:
        thr = np.partition(scores, n_cols - k, axis=1)[:, n_cols - k][:, None]
        above = scores > thr
        need = k - above.sum(axis=1, keepdims=True)
        ties = scores == thr
        chosen = above | (ties & (np.cumsum(ties, axis=1) <= need))
    cols = np.nonzero(chosen)[1].reshape(n_rows, k)
    vals = np.take_along_axis(scores, cols, axis=1)
    # cols are ascending per row already; a stable sort on -score keeps index order among ties
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1)
