"""Pure numpy versions of the compiled kernels (same signatures)."""
import numpy as np


def csr_spmm(indptr, indices, data, x):
    n_rows = len(indptr) - 1
    out = np.zeros((n_rows, x.shape[1]), dtype=np.float64)
    if len(data) == 0:
        return out
    contrib = data[:, None] * x[indices]
    counts = np.diff(indptr)
    nonempty = counts > 0
    # reduceat needs strictly the segment starts of non-empty rows
    out[nonempty] = np.add.reduceat(contrib, indptr[:-1][nonempty], axis=0)
    return out


def scatter_add_rows(out, idx, rows):
    """out[idx[b]] += rows[b], accumulated in batch order."""
    np.add.at(out, idx, rows)
