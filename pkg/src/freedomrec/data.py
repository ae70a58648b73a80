"""Dataset preparation: k-core filtering, id densification, prepared-dir I/O, synthetic data."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from freedomrec.errors import DatasetError
from freedomrec.evaluation import SplitDataset
from freedomrec.interaction_graph import InteractionMatrix, read_dense_pairs, write_pairs
from freedomrec.modality_graph import FeatureMatrix


def k_core_filter(users, items, k: int = 5) -> np.ndarray:
    """Boolean mask of interactions surviving iterative k-core filtering.

    Rows are dropped until every remaining user and item has at least ``k``
    interactions. Duplicate (user, item) pairs must be removed beforehand.
    """
    _, u = np.unique(np.asarray(users), return_inverse=True)
    _, i = np.unique(np.asarray(items), return_inverse=True)
    u, i = u.ravel(), i.ravel()
    keep = np.ones(len(u), dtype=bool)
    while True:
        cu = np.bincount(u[keep], minlength=u.max() + 1 if len(u) else 0)
        ci = np.bincount(i[keep], minlength=i.max() + 1 if len(i) else 0)
        ok = keep & (cu[u] >= k) & (ci[i] >= k)
        if np.array_equal(ok, keep):
            return keep
        keep = ok


def dedupe(users, items):
    """First occurrence of each (user, item) pair, original order preserved."""
    users, items = np.asarray(users), np.asarray(items)
    seen = set()
    mask = np.zeros(len(users), dtype=bool)
    for n, key in enumerate(zip(users.tolist(), items.tolist())):
        if key not in seen:
            seen.add(key)
            mask[n] = True
    return mask


def densify(values) -> tuple[np.ndarray, np.ndarray]:
    """Map raw ids to 0..n-1 in order of first appearance; returns (dense, raw_by_dense)."""
    values = np.asarray(values)
    raw, first, inverse = np.unique(values, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse.ravel()].astype(np.int64), raw[order]


@dataclass
class PreparedInteractions:
    users: np.ndarray
    items: np.ndarray
    user_ids: np.ndarray  # raw id of each dense user
    item_ids: np.ndarray

    @property
    def matrix(self) -> InteractionMatrix:
        return InteractionMatrix.from_pairs(self.users, self.items, len(self.user_ids), len(self.item_ids))


def prepare_interactions(users, items, core: int = 5) -> PreparedInteractions:
    first = dedupe(users, items)
    users, items = np.asarray(users)[first], np.asarray(items)[first]
    keep = k_core_filter(users, items, core)
    if not keep.any():
        raise DatasetError(f"no interactions survive {core}-core filtering")
    du, uid = densify(users[keep])
    di, iid = densify(items[keep])
    return PreparedInteractions(du, di, uid, iid)


def save_split(out_dir, split: SplitDataset, user_ids=None, item_ids=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u, i = split.train.pairs()
    write_pairs(out / "train.tsv", u, i)
    for name in ("val", "test"):
        sets = split.holdout(name)
        uu = np.concatenate([np.full(len(s), n) for n, s in enumerate(sets)]) if sets else []
        ii = np.concatenate(sets) if sets else []
        write_pairs(out / f"{name}.tsv", uu, ii)
    (out / "meta.tsv").write_text(f"n_users\t{split.M}\nn_items\t{split.N}\n", encoding="utf-8")
    if user_ids is not None:
        write_pairs(out / "user_map.tsv", range(len(user_ids)), user_ids)
    if item_ids is not None:
        write_pairs(out / "item_map.tsv", range(len(item_ids)), item_ids)


def load_split(data_dir) -> SplitDataset:
    d = Path(data_dir)
    try:
        meta = dict(line.split("\t") for line in (d / "meta.tsv").read_text(encoding="utf-8").split("\n") if line)
        M, N = int(meta["n_users"]), int(meta["n_items"])
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"{d}: missing or malformed meta.tsv") from exc
    train = InteractionMatrix.from_pairs(*read_dense_pairs(d / "train.tsv"), M, N)
    parts = {}
    for name in ("val", "test"):
        u, i = read_dense_pairs(d / f"{name}.tsv")
        order = np.lexsort((i, u))
        u, i = u[order], i[order]
        bounds = np.searchsorted(u, np.arange(M + 1))
        parts[name] = [i[bounds[x]:bounds[x + 1]] for x in range(M)]
    return SplitDataset(train, parts["val"], parts["test"])


def synthetic_block_dataset(
    n_users: int = 200,
    n_items: int = 100,
    n_blocks: int = 4,
    p_in: float = 0.3,
    noise: float = 0.1,
    seed: int = 0,
) -> tuple[InteractionMatrix, list[FeatureMatrix], np.ndarray, np.ndarray]:
    """Block-structured toy data: users interact only inside their own item block.

    Each modality's features are the item's block one-hot plus Gaussian noise.
    Returns (interactions, features, user_blocks, item_blocks).
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(n_users) % n_blocks
    ib = np.arange(n_items) % n_blocks
    hit = (ub[:, None] == ib[None, :]) & (rng.random((n_users, n_items)) < p_in)
    # every user needs >= 3 interactions to be splittable
    for u in np.flatnonzero(hit.sum(axis=1) < 3):
        own = np.flatnonzero(ib == ub[u])
        hit[u, rng.choice(own, size=3, replace=False)] = True
    u, i = np.nonzero(hit)
    onehot = np.eye(n_blocks)[ib]
    feats = [
        FeatureMatrix(m, onehot + noise * rng.standard_normal((n_items, n_blocks)))
        for m in ("visual", "textual")
    ]
    return InteractionMatrix.from_pairs(u, i, n_users, n_items), feats, ub, ib
