"""Per-user 80/10/10 split, all-ranking top-K and Recall/NDCG."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from freedomrec.errors import DatasetError, ParameterError
from freedomrec.interaction_graph import InteractionMatrix
from freedomrec.model import ModelState, forward
from freedomrec.sparse_core import top_k_per_row

_USER_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: InteractionMatrix
    val: list  # per-user sorted int arrays
    test: list

    @property
    def M(self) -> int:
        return self.train.n_users

    @property
    def N(self) -> int:
        return self.train.n_items

    @property
    def n_interactions(self) -> int:
        return self.train.nnz + sum(map(len, self.val)) + sum(map(len, self.test))

    def holdout(self, which: str) -> list:
        if which not in ("val", "test"):
            raise ParameterError(f"unknown partition {which!r}")
        return self.val if which == "val" else self.test


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_counts(n: int, ratios=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    """Deterministic per-user (train, val, test) sizes.

    train = round_half_up(n * r_train), clipped to [1, n - 1]; validation then
    takes round_half_up(n * r_val) from what is left but never the last
    interaction, which is reserved so that test >= 1.
    """
    if n < 3:
        raise DatasetError(f"a user needs at least 3 interactions to split, got {n}")
    r_train, r_val = (Fraction(str(r)) for r in ratios[:2])
    n_train = min(max(_round_half_up(n * r_train), 1), n - 1)
    rest = n - n_train
    n_val = max(0, min(_round_half_up(n * r_val), rest - 1))
    return n_train, n_val, rest - n_val


def split_dataset(interactions: InteractionMatrix, ratios=(0.8, 0.1, 0.1), rng=None) -> SplitDataset:
    if not math.isclose(sum(ratios), 1.0):
        raise ParameterError(f"split ratios must sum to 1, got {ratios}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    M, N = interactions.n_users, interactions.n_items
    tr_u, tr_i, val, test = [], [], [], []
    for u in range(M):
        items = interactions.items_of(u)
        if len(items) == 0:
            raise DatasetError(f"user {u} has no interactions")
        a, b, _ = split_counts(len(items), ratios)
        perm = rng.permutation(items)
        tr_u.append(np.full(a, u))
        tr_i.append(perm[:a])
        val.append(np.sort(perm[a:a + b]))
        test.append(np.sort(perm[a + b:]))
    train = InteractionMatrix.from_pairs(np.concatenate(tr_u), np.concatenate(tr_i), M, N)
    return SplitDataset(train, val, test)


def rank_all(state: ModelState, item_graph, A_hat, train: InteractionMatrix, K: int, users=None) -> dict[int, np.ndarray]:
    """Top-K unseen items for each requested user (default: all users).

    Scores every item, masks the user's training items, ties go to the lower id.
    Lists are shorter than K only when fewer than K items are unmasked.
    """
    trace = forward(state, item_graph, A_hat)
    return rank_from_embeddings(trace.final_user, trace.final_item, train, K, users)


def rank_from_embeddings(h_u, h_i, train: InteractionMatrix, K: int, users=None) -> dict[int, np.ndarray]:
    users = np.arange(h_u.shape[0]) if users is None else np.asarray(users, dtype=np.int64)
    out = {}
    R = train.R
    for lo in range(0, len(users), _USER_CHUNK):
        chunk = users[lo:lo + _USER_CHUNK]
        scores = h_u[chunk] @ h_i.T
        for r, u in enumerate(chunk):
            scores[r, R.indices[R.indptr[u]:R.indptr[u + 1]]] = -np.inf
        top = top_k_per_row(scores, K)
        top_scores = np.take_along_axis(scores, top, axis=1)
        for r, u in enumerate(chunk):
            out[int(u)] = top[r][top_scores[r] > -np.inf]
    return out


def popularity_ranking(train: InteractionMatrix, K: int, users=None) -> dict[int, np.ndarray]:
    """Most-popular baseline with the same masking and tie rule as rank_all."""
    pop = train.item_degrees().astype(np.float64)
    M = train.n_users
    h_u = np.ones((M, 1))
    return rank_from_embeddings(h_u, pop[:, None], train, K, users)


def _evaluated_users(test_sets):
    return [u for u, t in enumerate(test_sets) if len(t) > 0]


def recall_at_k(lists, test_sets, K: int) -> float:
    """Mean |top-K hits| / |test set| over users with a non-empty test set."""
    users = _evaluated_users(test_sets)
    if not users:
        return 0.0
    total = 0.0
    for u in users:
        top = np.asarray(lists.get(u, ()), dtype=np.int64)[:K]
        total += np.isin(top, test_sets[u]).sum() / len(test_sets[u])
    return float(total / len(users))


def ndcg_at_k(lists, test_sets, K: int) -> float:
    """Binary-relevance NDCG with log2(rank + 1) discount and truncated ideal DCG."""
    users = _evaluated_users(test_sets)
    if not users:
        return 0.0
    discount = 1.0 / np.log2(np.arange(2, K + 2))
    total = 0.0
    for u in users:
        top = np.asarray(lists.get(u, ()), dtype=np.int64)[:K]
        hits = np.isin(top, test_sets[u])
        dcg = discount[: len(top)][hits].sum()
        idcg = discount[: min(K, len(test_sets[u]))].sum()
        total += dcg / idcg
    return float(total / len(users))


def metrics_from_lists(lists, holdout, ks=(10, 20)) -> dict[str, float]:
    out = {}
    for k in ks:
        out[f"R@{k}"] = recall_at_k(lists, holdout, k)
    for k in ks:
        out[f"N@{k}"] = ndcg_at_k(lists, holdout, k)
    return out


def evaluate(state, item_graph, A_hat, split: SplitDataset, which="test", ks=(10, 20)) -> dict[str, float]:
    holdout = split.holdout(which)
    users = _evaluated_users(holdout)
    lists = rank_all(state, item_graph, A_hat, split.train, max(ks), users)
    return metrics_from_lists(lists, holdout, ks)


def evaluate_popularity(split: SplitDataset, which="test", ks=(10, 20)) -> dict[str, float]:
    holdout = split.holdout(which)
    lists = popularity_ranking(split.train, max(ks), _evaluated_users(holdout))
    return metrics_from_lists(lists, holdout, ks)
