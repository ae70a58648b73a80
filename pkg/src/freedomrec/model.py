"""Parameters and the (linear) forward pass.

Item representation = item-item propagation of the ID embeddings plus the
mean-readout of user-item propagation. Modality projections only feed the
training loss; scores use ID-derived representations alone.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from freedomrec.errors import DimensionError, FormatError
from freedomrec.modality_graph import FeatureMatrix, ItemItemGraph
from freedomrec.sparse_core import CsrMatrix, spmm

CHECKPOINT_MAGIC = b"FRDM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    user_emb: np.ndarray
    item_emb: np.ndarray
    projectors: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    L_ui: int = 2
    L_ii: int = 1

    def __post_init__(self):
        d = self.user_emb.shape[1]
        if self.item_emb.shape[1] != d:
            raise DimensionError("user and item embeddings differ in width")
        for name, (W, b) in self.projectors.items():
            if W.shape[1] != d or b.shape != (d,):
                raise DimensionError(f"projector {name} does not map into dimension {d}")
        if self.L_ui < 0 or self.L_ii < 0:
            raise ValueError("layer counts must be non-negative")

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array views; updating them in place updates the model."""
        params = {"user_emb": self.user_emb, "item_emb": self.item_emb}
        for m, (W, b) in self.projectors.items():
            params[f"W.{m}"] = W
            params[f"b.{m}"] = b
        return params

    def copy(self) -> ModelState:
        return ModelState(
            self.user_emb.copy(),
            self.item_emb.copy(),
            {m: (W.copy(), b.copy()) for m, (W, b) in self.projectors.items()},
            self.L_ui,
            self.L_ii,
        )


@dataclass
class ForwardTrace:
    item_mm: np.ndarray
    user_rep: np.ndarray
    item_rep_ui: np.ndarray
    final_user: np.ndarray
    final_item: np.ndarray
    projected: dict[str, np.ndarray] = field(default_factory=dict)


def _matrix(graph) -> CsrMatrix:
    return graph.matrix if isinstance(graph, ItemItemGraph) else graph


def propagate_item_item(S, item_emb: np.ndarray, L_ii: int) -> np.ndarray:
    """Apply the frozen item-item graph L_ii times; no readout."""
    S = _matrix(S)
    if S.shape != (item_emb.shape[0], item_emb.shape[0]):
        raise DimensionError(f"item graph {S.shape} vs {item_emb.shape[0]} items")
    h = np.asarray(item_emb, dtype=np.float64)
    for _ in range(L_ii):
        h = spmm(S, h)
    return h


def propagate_user_item(A_hat: CsrMatrix, user_emb, item_emb, L_ui: int) -> tuple[np.ndarray, np.ndarray]:
    """LightGCN propagation with mean readout over layers 0..L_ui."""
    M = user_emb.shape[0]
    h = np.vstack((user_emb, item_emb)).astype(np.float64)
    if A_hat.shape != (h.shape[0], h.shape[0]):
        raise DimensionError(f"adjacency {A_hat.shape} vs {h.shape[0]} nodes")
    acc = h.copy()
    for _ in range(L_ui):
        h = spmm(A_hat, h)
        acc += h
    acc /= L_ui + 1
    return acc[:M], acc[M:]


def fuse_representations(user_rep, item_rep_ui, item_mm) -> tuple[np.ndarray, np.ndarray]:
    if item_rep_ui.shape != item_mm.shape:
        raise DimensionError("item representations from the two graphs differ in shape")
    return user_rep, item_mm + item_rep_ui


def project_modality(X, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = X.features if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot project {x.shape} with W {W.shape}, b {b.shape}")
    return x @ W + b


def score(h_u: np.ndarray, h_i: np.ndarray) -> float:
    return float(np.dot(h_u, h_i))


def forward(state: ModelState, item_graph, A_hat: CsrMatrix, features: dict | None = None) -> ForwardTrace:
    """Full forward pass. ``features`` maps modality -> FeatureMatrix/array; omit it at inference."""
    item_mm = propagate_item_item(item_graph, state.item_emb, state.L_ii)
    user_rep, item_rep = propagate_user_item(A_hat, state.user_emb, state.item_emb, state.L_ui)
    h_u, h_i = fuse_representations(user_rep, item_rep, item_mm)
    projected = {}
    if features:
        for m, (W, b) in state.projectors.items():
            projected[m] = project_modality(features[m], W, b)
    return ForwardTrace(item_mm, user_rep, item_rep, h_u, h_i, projected)


def save_checkpoint(path, state: ModelState) -> None:
    """Write the FRDM binary checkpoint (little-endian)."""
    tensors = dict(state.parameters())
    tensors["layers"] = np.array([state.L_ui, state.L_ii], dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, state.n_users, state.n_items, state.dim))
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not an FRDM checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        version, M, N, d = take("<IIII")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            (nlen,) = take("<I")
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            size = int(np.prod(shape)) * 8
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    L_ui, L_ii = (int(v) for v in tensors.pop("layers"))
    user, item = tensors.pop("user_emb"), tensors.pop("item_emb")
    if user.shape != (M, d) or item.shape != (N, d):
        raise FormatError(f"{path}: header shape does not match embedding tensors")
    projectors = {}
    for name in [n for n in tensors if n.startswith("W.")]:
        m = name[2:]
        projectors[m] = (tensors[name], tensors[f"b.{m}"])
    return ModelState(user, item, projectors, L_ui, L_ii)
