"""Independent reference computations used by several test modules.

Everything here works on dense matrices and plain python loops so that it
shares no code path with the library under test.
"""
import math

import numpy as np


def dense_forward(params, S, A, L_ui, L_ii, features):
    M = params["user_emb"].shape[0]
    h = np.vstack((params["user_emb"], params["item_emb"]))
    layers = [h]
    for _ in range(L_ui):
        layers.append(A @ layers[-1])
    mean = sum(layers) / (L_ui + 1)
    mm = params["item_emb"]
    for _ in range(L_ii):
        mm = S @ mm
    proj = {m: x @ params[f"W.{m}"] + params[f"b.{m}"] for m, x in features.items()}
    return mean[:M], mean[M:] + mm, proj


def loss_oracle(params, triples, S, A, L_ui, L_ii, features, lam):
    hu, hi, proj = dense_forward(params, S, A, L_ui, L_ii, features)
    total = 0.0
    for u, i, j in triples:
        x = float(hu[u] @ (hi[i] - hi[j]))
        total += math.log1p(math.exp(-x))
        for m in sorted(proj):
            y = float(hu[u] @ (proj[m][i] - proj[m][j]))
            total += lam * math.log1p(math.exp(-y))
    return total / len(triples)


def fd_gradient(params, name, f, h=1e-5):
    """Central finite differences of scalar f(params) w.r.t. params[name]."""
    p = params[name]
    out = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = f(params)
        p[idx] = old - h
        down = f(params)
        p[idx] = old
        out[idx] = (up - down) / (2 * h)
    return out


def rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def recall_oracle(lists, tests, K):
    vals = []
    for u, t in enumerate(tests):
        if not len(t):
            continue
        top = list(lists.get(u, []))[:K]
        vals.append(len(set(top) & set(t)) / len(t))
    return sum(vals) / len(vals) if vals else 0.0


def ndcg_oracle(lists, tests, K):
    vals = []
    for u, t in enumerate(tests):
        if not len(t):
            continue
        top = list(lists.get(u, []))[:K]
        rel = set(int(x) for x in t)
        dcg = sum(1 / math.log2(r + 2) for r, it in enumerate(top) if int(it) in rel)
        idcg = sum(1 / math.log2(r + 2) for r in range(min(K, len(rel))))
        vals.append(dcg / idcg)
    return sum(vals) / len(vals) if vals else 0.0


def gradient_instance(seed, lam, L_ui, L_ii, M=4, N=5, d=3):
    """Random small model + graphs + batch for gradient checks."""
    from freedomrec.interaction_graph import InteractionMatrix, build_adjacency
    from freedomrec.model import ModelState
    from freedomrec.sparse_core import CsrMatrix, normalize_sym
    from freedomrec.training import Triples

    rng = np.random.default_rng(seed)
    mask = rng.random((M, N)) < 0.5
    mask[np.arange(M), np.arange(M) % N] = True
    mask[np.arange(M), (np.arange(M) + 1) % N] = False
    u, i = np.nonzero(mask)
    R = InteractionMatrix.from_pairs(u, i, M, N)
    A = build_adjacency(R).normalized
    s = rng.random((N, N)) * (rng.random((N, N)) < 0.6)
    np.fill_diagonal(s, 1.0)
    S = normalize_sym(CsrMatrix.from_dense(s))
    feats = {"visual": rng.standard_normal((N, 4)), "textual": rng.standard_normal((N, 2))}
    state = ModelState(
        rng.standard_normal((M, d)) * 0.5,
        rng.standard_normal((N, d)) * 0.5,
        {m: (rng.standard_normal((x.shape[1], d)) * 0.5, rng.standard_normal(d) * 0.5) for m, x in feats.items()},
        L_ui, L_ii,
    )
    B = 6
    bu = rng.integers(0, M, B)
    bi = np.array([rng.choice(np.flatnonzero(mask[x])) for x in bu])
    bj = np.array([rng.choice(np.flatnonzero(~mask[x])) for x in bu])
    return state, S, A, feats, Triples(bu, bi, bj)
