"""Eigenvalue bounds of the unweighted (frozen) vs. weighted item-item matrices.

For a non-negative matrix the dominant eigenvalue is bounded by its largest
row sum, which in turn is at most ``n`` times its largest entry. The report
computes all three quantities for both graph variants built from the same
features, fused and per modality.

It also reports the largest eigenvalue of the normalized Laplacian ``I - S``
(largest real part), a second reading of "largest eigenvalue" that is not
pinned to 1 when every row of the unweighted graph has the same degree.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from freedomrec.modality_graph import FeatureMatrix, build_frozen_graph
from freedomrec.sparse_core import CsrMatrix, dominant_eigenvalue, row_sums, spmm

DENSE_CHECK_MAX_N = 100
DENSE_LAPLACIAN_MAX_N = 400


@dataclass(frozen=True)
class Spectrum:
    lambda_max: float
    converged: bool
    row_sum_max: float
    max_elem: float
    n: int
    lambda_dense: float | None = None  # dense-eigensolver cross-check, small n only
    laplacian_max: float | None = None

    def chain_holds(self, tol: float = 1e-8) -> bool:
        return self.lambda_max <= self.row_sum_max + tol and self.row_sum_max <= self.n * self.max_elem + tol


def laplacian_max(S: CsrMatrix, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest real part among the eigenvalues of ``I - S``.

    Dense for small matrices, ARPACK (implicitly restarted Arnoldi) otherwise.
    """
    n = S.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_LAPLACIAN_MAX_N:
        return float(np.linalg.eigvals(np.eye(n) - S.to_dense()).real.max())
    op = LinearOperator((n, n), matvec=lambda x: x - spmm(S, x), dtype=np.float64)
    v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, n)
    try:
        vals = eigs(op, k=1, which="LR", tol=tol, v0=v0, maxiter=50 * n, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        if not len(exc.eigenvalues):
            raise
        vals = exc.eigenvalues
    return float(np.max(vals.real))


def spectrum(S: CsrMatrix, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0,
             dense_check_max: int = DENSE_CHECK_MAX_N) -> Spectrum:
    est = dominant_eigenvalue(S, tol=tol, max_iter=max_iter, rng_seed=seed)
    n = S.shape[0]
    dense = None
    if n <= dense_check_max:
        dense = float(np.max(np.abs(np.linalg.eigvals(S.to_dense())))) if n else 0.0
    return Spectrum(
        lambda_max=est.value,
        converged=est.converged,
        row_sum_max=float(row_sums(S).max()) if n else 0.0,
        max_elem=float(S.data.max()) if S.nnz else 0.0,
        n=n,
        lambda_dense=dense,
        laplacian_max=laplacian_max(S, seed=seed),
    )


@dataclass(frozen=True)
class SpectralReport:
    frozen: Spectrum
    weighted: Spectrum
    k: int
    alpha_v: float
    per_modality: dict[str, dict[str, Spectrum]] = field(default_factory=dict)

    @property
    def lambda_max_frozen(self) -> float:
        return self.frozen.lambda_max

    @property
    def lambda_max_weighted(self) -> float:
        return self.weighted.lambda_max

    @property
    def max_elem_frozen(self) -> float:
        return self.frozen.max_elem

    @property
    def max_elem_weighted(self) -> float:
        return self.weighted.max_elem

    @property
    def laplacian_max_frozen(self) -> float:
        return self.frozen.laplacian_max

    @property
    def laplacian_max_weighted(self) -> float:
        return self.weighted.laplacian_max

    @property
    def converged(self) -> bool:
        return self.frozen.converged and self.weighted.converged

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha_v": self.alpha_v,
            "frozen": asdict(self.frozen),
            "weighted": asdict(self.weighted),
            "per_modality": {m: {v: asdict(s) for v, s in d.items()} for m, d in self.per_modality.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Two rows (unweighted, weighted) over the fused matrix."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "graph", "lambda_max", "row_sum_max", "n_max_elem", "max_elem", "converged",
                    "laplacian_max"])
        for model, graph, s in (("FREEDOM", "frozen", self.frozen), ("LATTICE", "weighted", self.weighted)):
            w.writerow([model, graph, f"{s.lambda_max:.6f}", f"{s.row_sum_max:.6f}",
                        f"{s.n * s.max_elem:.6f}", f"{s.max_elem:.6f}", int(s.converged),
                        f"{s.laplacian_max:.6f}"])
        return buf.getvalue()


def spectral_report(features: list[FeatureMatrix], k: int = 10, alpha_v: float = 0.1, *,
                    tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> SpectralReport:
    frozen = build_frozen_graph(features, k, alpha_v, weighted=False)
    weighted = build_frozen_graph(features, k, alpha_v, weighted=True)
    per = {}
    if len(features) > 1:
        for m in frozen.per_modality:
            per[m] = {
                "frozen": spectrum(frozen.per_modality[m], tol, max_iter, seed),
                "weighted": spectrum(weighted.per_modality[m], tol, max_iter, seed),
            }
    return SpectralReport(
        frozen=spectrum(frozen.matrix, tol, max_iter, seed),
        weighted=spectrum(weighted.matrix, tol, max_iter, seed),
        k=k,
        alpha_v=alpha_v,
        per_modality=per,
    )
