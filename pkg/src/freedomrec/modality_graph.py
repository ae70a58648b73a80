"""Frozen item-item graph built from raw modality features.

Per modality: cosine similarity -> top-k rows -> symmetric normalization.
Modalities are then mixed with weight ``alpha_v`` for the visual graph and
``1 - alpha_v`` for the textual one.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from freedomrec.errors import DimensionError, FormatError, ParameterError
from freedomrec.sparse_core import CsrMatrix, add, normalize_sym, top_k_per_row

MODALITIES = ("visual", "textual")
FMAT_MAGIC = b"FMAT"
_ROW_CHUNK = 1024
_TIE_DECIMALS = 12


@dataclass(frozen=True)
class FeatureMatrix:
    modality: str
    features: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}")
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise DimensionError("features must be a 2-D (items x dims) array")
        if not np.all(np.isfinite(f)):
            raise ParameterError(f"{self.modality} features contain NaN/Inf")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)

    @property
    def n_items(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ItemItemGraph:
    """Fused normalized item-item adjacency. Immutable once built."""

    matrix: CsrMatrix
    k: int
    alpha_v: float
    weighted: bool
    per_modality: dict | None = None

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]


def write_fmat(path, features) -> None:
    f = np.ascontiguousarray(features, dtype="<f4")
    n, d = f.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(f.tobytes())


def read_fmat(path, modality: str) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FMAT_MAGIC:
        raise FormatError(f"{path}: missing FMAT header")
    n, d = struct.unpack_from("<II", raw, 4)
    body = raw[12:]
    if len(body) != 4 * n * d:
        raise FormatError(f"{path}: expected {n}x{d} float32 payload, got {len(body)} bytes")
    x = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float64)
    return FeatureMatrix(modality, x)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return x / safe[:, None], zero


def cosine_similarity(x: np.ndarray) -> np.ndarray:
    """Dense N x N cosine matrix; pairs involving an all-zero row score 0."""
    u, _ = _unit_rows(np.asarray(x, dtype=np.float64))
    return u @ u.T


def knn_graph(features: FeatureMatrix | np.ndarray, k: int, weighted: bool = False) -> CsrMatrix:
    """Top-k cosine neighbour graph (self included when it ranks in the top k).

    Unweighted entries are 1; weighted entries hold ``max(cos, 0)`` and zero
    entries are dropped. An all-zero feature row yields a single self entry.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    x = features.features if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ParameterError("need at least one item")
    u, zero = _unit_rows(x)
    kk = min(k, n)
    rows, cols, vals = [], [], []
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        # rounded so that mathematically equal cosines tie exactly (and identical rows give exactly 1)
        sim = np.round(u[lo:hi] @ u.T, _TIE_DECIMALS)
        top = top_k_per_row(sim, kk)
        r = np.repeat(np.arange(lo, hi), kk)
        c = top.ravel()
        v = np.take_along_axis(sim, top, axis=1).ravel()
        keep = ~zero[r]
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])
    z = np.flatnonzero(zero)
    rows.append(z)
    cols.append(z)
    vals.append(np.ones(len(z)))
    r, c, v = (np.concatenate(a) for a in (rows, cols, vals))
    if weighted:
        # self-similarity is exactly 1; the dot product of a unit row with itself may round below it
        v = np.where(r == c, 1.0, np.clip(v, 0.0, 1.0))
        keep = v > 0
        r, c, v = r[keep], c[keep], v[keep]
    else:
        v = np.ones_like(v)
    return CsrMatrix.from_coo(r, c, v, (n, n), sum_duplicates=False)


def fuse_modalities(graphs: dict[str, CsrMatrix], alpha_v: float) -> CsrMatrix:
    """alpha_v * visual + (1 - alpha_v) * textual; a lone modality is returned as-is."""
    if not 0.0 <= alpha_v <= 1.0:
        raise ParameterError(f"alpha_v must lie in [0, 1], got {alpha_v}")
    if not graphs:
        raise ParameterError("no modality graphs given")
    unknown = set(graphs) - set(MODALITIES)
    if unknown:
        raise ParameterError(f"unknown modalities {sorted(unknown)}")
    if len(graphs) == 1:
        return next(iter(graphs.values()))
    v, t = graphs["visual"], graphs["textual"]
    if v.shape != t.shape:
        raise DimensionError(f"modality graphs disagree: {v.shape} vs {t.shape}")
    return add(v, t, alpha_v, 1.0 - alpha_v)


def build_frozen_graph(
    features: list[FeatureMatrix], k: int = 10, alpha_v: float = 0.1, weighted: bool = False
) -> ItemItemGraph:
    if not features:
        raise ParameterError("at least one modality is required")
    sizes = {f.n_items for f in features}
    if len(sizes) != 1:
        raise DimensionError(f"modalities disagree on item count: {sorted(sizes)}")
    per = {}
    for fm in features:
        if fm.modality in per:
            raise ParameterError(f"duplicate modality {fm.modality}")
        per[fm.modality] = normalize_sym(knn_graph(fm, k, weighted))
    return ItemItemGraph(fuse_modalities(per, alpha_v), k, float(alpha_v), bool(weighted), per)
