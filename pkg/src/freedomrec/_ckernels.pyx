# cython: cdivision=True
"""Compiled inner loops: CSR x dense products and row scatter-adds."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_spmm(const cnp.int64_t[::1] indptr,
             const cnp.int64_t[::1] indices,
             const double[::1] data,
             const double[:, ::1] x):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = x.shape[1]
    out = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, c
    cdef cnp.int64_t p, j
    cdef double v
    with nogil:
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(n_cols):
                    o[i, c] += v * x[j, c]
    return out


def scatter_add_rows(double[:, ::1] out,
                     const cnp.int64_t[::1] idx,
                     const double[:, ::1] rows):
    """out[idx[b]] += rows[b], accumulated in batch order."""
    cdef Py_ssize_t b, c
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    cdef cnp.int64_t r
    with nogil:
        for b in range(n):
            r = idx[b]
            for c in range(d):
                out[r, c] += rows[b, c]
