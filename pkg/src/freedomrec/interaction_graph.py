"""User-item bipartite graph and degree-sensitive edge pruning.

Users take node ids ``[0, M)`` and items ``[M, M + N)``. Every undirected
edge is kept once in ``edge_list`` as ``(user_node, item_node)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from freedomrec.errors import DatasetError, FormatError, ParameterError
from freedomrec.sparse_core import CsrMatrix, normalize_sym

SAMPLING_MODES = ("without_replacement", "with_replacement_dedup")


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary M x N user-item matrix."""

    R: CsrMatrix

    @classmethod
    def from_pairs(cls, users, items, n_users: int, n_items: int) -> InteractionMatrix:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if len(users) and len(np.unique(users * n_items + items)) != len(users):
            raise DatasetError("duplicate (user, item) interaction")
        return cls(CsrMatrix.from_coo(users, items, 1.0, (n_users, n_items), sum_duplicates=False))

    @property
    def n_users(self) -> int:
        return self.R.shape[0]

    @property
    def n_items(self) -> int:
        return self.R.shape[1]

    @property
    def nnz(self) -> int:
        return self.R.nnz

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.R.row_ids(), self.R.indices

    def items_of(self, u: int) -> np.ndarray:
        return self.R.row(u)[0]

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.R.indptr)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.R.indices, minlength=self.n_items)


def bipartite_from_edges(users, item_nodes, n_nodes: int) -> CsrMatrix:
    """Symmetric 0/1 adjacency from undirected (user_node, item_node) pairs."""
    r = np.concatenate((users, item_nodes))
    c = np.concatenate((item_nodes, users))
    return CsrMatrix.from_coo(r, c, 1.0, (n_nodes, n_nodes), sum_duplicates=False)


@dataclass(frozen=True, eq=False)
class BipartiteAdjacency:
    A: CsrMatrix
    M: int
    N: int
    edge_list: np.ndarray  # (|E|, 2), first column < second

    @property
    def n_edges(self) -> int:
        return len(self.edge_list)

    def degrees(self) -> np.ndarray:
        return np.diff(self.A.indptr).astype(np.float64)

    @cached_property
    def normalized(self) -> CsrMatrix:
        return normalize_sym(self.A)


def build_adjacency(R: InteractionMatrix) -> BipartiteAdjacency:
    M, N = R.n_users, R.n_items
    u, i = R.pairs()
    item_nodes = i + M
    edges = np.stack((u, item_nodes), axis=1)
    edges.flags.writeable = False
    return BipartiteAdjacency(bipartite_from_edges(u, item_nodes, M + N), M, N, edges)


def full_normalized(adj: BipartiteAdjacency) -> CsrMatrix:
    """Unpruned D^-1/2 A D^-1/2 used at inference time (cached on ``adj``)."""
    return adj.normalized


def edge_probabilities(adj: BipartiteAdjacency) -> np.ndarray:
    """Per-edge weight 1/sqrt(deg_i * deg_j), aligned with ``adj.edge_list``."""
    deg = adj.degrees()
    e = adj.edge_list
    return 1.0 / (np.sqrt(deg[e[:, 0]]) * np.sqrt(deg[e[:, 1]]))


@dataclass(frozen=True)
class EdgePruner:
    probs: np.ndarray
    rho: float
    sampling: str = "without_replacement"

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ParameterError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sampling not in SAMPLING_MODES:
            raise ParameterError(f"sampling must be one of {SAMPLING_MODES}")
        p = np.array(self.probs, dtype=np.float64)
        if len(p) and p.min() <= 0:
            raise ParameterError("edge weights must be positive")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @classmethod
    def degree_sensitive(cls, adj: BipartiteAdjacency, rho: float, **kw) -> EdgePruner:
        return cls(edge_probabilities(adj), rho, **kw)

    @classmethod
    def uniform(cls, adj: BipartiteAdjacency, rho: float, **kw) -> EdgePruner:
        """Random edge dropout: every edge equally likely to survive."""
        return cls(np.ones(adj.n_edges), rho, **kw)

    def n_keep(self, n_edges: int | None = None) -> int:
        e = len(self.probs) if n_edges is None else n_edges
        # the product is rounded to 12 decimals first so that e.g. 100 * (1 - 0.8) is 20, not 21
        return min(e, math.ceil(round(e * (1.0 - self.rho), 12)))


def weighted_sample_without_replacement(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of n distinct items, drawn one at a time proportional to the remaining weights.

    Uses exponential keys (Efraimidis-Spirakis): item i gets ``E_i / w_i`` with
    ``E_i ~ Exp(1)`` and the n smallest keys win, which has the same law as
    sequential draws. Result is sorted ascending.
    """
    m = len(weights)
    if n >= m:
        return np.arange(m)
    if n <= 0:
        return np.empty(0, dtype=np.int64)
    keys = rng.standard_exponential(m) / weights
    return np.sort(np.argpartition(keys, n - 1)[:n])


def sample_edges(pruner: EdgePruner, rng: np.random.Generator) -> np.ndarray:
    n = pruner.n_keep()
    if pruner.sampling == "without_replacement":
        return weighted_sample_without_replacement(pruner.probs, n, rng)
    p = pruner.probs / pruner.probs.sum()
    return np.unique(rng.choice(len(p), size=n, replace=True, p=p))


def prune_and_normalize(adj: BipartiteAdjacency, pruner: EdgePruner, rng_seed) -> CsrMatrix:
    """Sample this epoch's subgraph and renormalize it with its own degrees.

    ``rng_seed`` is an int seed or an ``np.random.Generator`` (consumed).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if len(pruner.probs) != adj.n_edges:
        raise ParameterError("pruner weights do not match the edge list")
    n_nodes = adj.M + adj.N
    if pruner.rho == 0.0:
        return full_normalized(adj)
    keep = sample_edges(pruner, rng)
    if len(keep) == 0:
        warnings.warn("edge pruning kept no edges; adjacency is all zero", RuntimeWarning, stacklevel=2)
        return CsrMatrix.zeros(n_nodes, n_nodes)
    e = adj.edge_list[keep]
    return normalize_sym(bipartite_from_edges(e[:, 0], e[:, 1], n_nodes))


def read_interactions_tsv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read ``user \\t item [\\t timestamp]`` rows. Ids stay strings."""
    users, items, stamps = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise FormatError(f"{path}:{lineno}: expected 2 or 3 tab-separated columns")
            users.append(parts[0])
            items.append(parts[1])
            stamps.append(parts[2] if len(parts) == 3 else None)
    ts = None if all(s is None for s in stamps) else np.array(stamps, dtype=object)
    return np.array(users, dtype=object), np.array(items, dtype=object), ts


def read_dense_pairs(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a prepared TSV whose ids are dense 0-based integers."""
    if Path(path).stat().st_size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    u, i, _ = read_interactions_tsv(path)
    try:
        return u.astype(np.int64), i.astype(np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: ids must be integers after prepare") from exc


def write_pairs(path, users, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in zip(users, items):
            fh.write(f"{u}\t{i}\n")
