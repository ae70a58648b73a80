"""BPR training with hand-derived gradients and Adam.

The forward map is linear in the parameters, so each backward step is just
propagation by the transposed graph: the item-item branch sends its gradient
through ``S^T`` L_ii times, and the mean readout spreads ``1/(L_ui+1)`` of the
representation gradient across every power of ``A_hat^T``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from freedomrec._backend import kernels
from freedomrec.errors import DatasetError, ParameterError, TrainingDivergedError
from freedomrec.evaluation import SplitDataset, evaluate, metrics_from_lists, rank_all
from freedomrec.interaction_graph import (
    SAMPLING_MODES,
    EdgePruner,
    InteractionMatrix,
    build_adjacency,
    full_normalized,
    prune_and_normalize,
)
from freedomrec.modality_graph import FeatureMatrix, ItemItemGraph, build_frozen_graph
from freedomrec.model import ForwardTrace, ModelState, forward
from freedomrec.sparse_core import CsrMatrix, spmm, transpose

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lambda_modal: float = 1e-3
    rho: float = 0.8
    alpha_v: float = 0.1
    k: int = 10
    d: int = 64
    L_ui: int = 2
    L_ii: int = 1
    batch_size: int = 2048
    max_epochs: int = 1000
    early_stop_patience: int = 20
    seed: int = 0
    sampler: str = "degree"  # "degree" | "uniform"
    weighted_graph: bool = False
    sampling: str = "without_replacement"

    def __post_init__(self):
        if self.lambda_modal < 0:
            raise ParameterError("lambda_modal must be >= 0")
        if not 0.0 <= self.rho < 1.0:
            raise ParameterError("rho must lie in [0, 1)")
        if not 0.0 <= self.alpha_v <= 1.0:
            raise ParameterError("alpha_v must lie in [0, 1]")
        if min(self.k, self.d, self.batch_size, self.max_epochs) < 1:
            raise ParameterError("k, d, batch_size and max_epochs must be positive")
        if self.L_ui < 0 or self.L_ii < 0 or self.early_stop_patience < 1:
            raise ParameterError("invalid layer counts or patience")
        if self.sampler not in ("degree", "uniform"):
            raise ParameterError(f"unknown sampler {self.sampler!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ParameterError(f"unknown sampling mode {self.sampling!r}")


# Each ablation tag changes exactly one knob of the default configuration.
ABLATIONS: dict[str, dict] = {
    "freedom": {},
    "freedom_f": {"rho": 0.0},
    "freedom_r": {"sampler": "uniform"},
    "freedom_0": {"lambda_modal": 0.0},
    "lattice_frozen": {"weighted_graph": True},
}


def apply_ablation(config: TrainConfig, tag: str) -> TrainConfig:
    try:
        delta = ABLATIONS[tag]
    except KeyError:
        raise ParameterError(f"unknown ablation {tag!r}; choose from {sorted(ABLATIONS)}") from None
    return dataclasses.replace(config, **delta)


def config_diff(a: TrainConfig, b: TrainConfig) -> dict[str, tuple]:
    return {
        f.name: (getattr(a, f.name), getattr(b, f.name))
        for f in dataclasses.fields(TrainConfig)
        if getattr(a, f.name) != getattr(b, f.name)
    }


class TrainTriple(NamedTuple):
    u: int
    i: int
    j: int


class Triples(NamedTuple):
    """Column-wise batch of (user, positive item, negative item)."""

    u: np.ndarray
    i: np.ndarray
    j: np.ndarray

    def __len__(self):
        return len(self.u)

    def rows(self):
        return [TrainTriple(int(a), int(b), int(c)) for a, b, c in zip(self.u, self.i, self.j)]

    def slice(self, lo, hi) -> Triples:
        return Triples(self.u[lo:hi], self.i[lo:hi], self.j[lo:hi])


class AdamState:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place Adam update of every array in ``params``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_state(M: int, N: int, feature_dims: dict[str, int], config: TrainConfig, rng) -> ModelState:
    user = xavier_init((M, config.d), rng)
    item = xavier_init((N, config.d), rng)
    projectors = {}
    for m in sorted(feature_dims):
        projectors[m] = (xavier_init((feature_dims[m], config.d), rng), np.zeros(config.d))
    return ModelState(user, item, projectors, config.L_ui, config.L_ii)


def sample_triples(R: InteractionMatrix, rng: np.random.Generator, count: int | None = None) -> Triples:
    """One triple per training interaction (shuffled), negatives uniform over unseen items.

    With ``count`` set, that many positives are drawn with replacement instead.
    """
    M, N = R.n_users, R.n_items
    deg = R.user_degrees()
    if np.any(deg >= N):
        raise DatasetError(f"user {int(np.argmax(deg >= N))} interacted with every item; no negative exists")
    u_all, i_all = R.pairs()
    if len(u_all) == 0:
        raise DatasetError("no training interactions")
    pick = rng.permutation(len(u_all)) if count is None else rng.integers(0, len(u_all), size=count)
    u, i = u_all[pick], i_all[pick]
    keys = u_all * N + i_all  # sorted: CSR order is (user, item) lexicographic
    j = rng.integers(0, N, size=len(u))
    bad = np.arange(len(u))
    while True:
        k = u[bad] * N + j[bad]
        pos = np.searchsorted(keys, k)
        clash = (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == k)
        bad = bad[clash]
        if len(bad) == 0:
            return Triples(u, i, j)
        j[bad] = rng.integers(0, N, size=len(bad))


def _softplus_neg(x):
    """-log(sigmoid(x)), stable for large |x|."""
    return np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bpr_loss(batch: Triples, trace: ForwardTrace, lambda_modal: float) -> float:
    """Mean over the batch of the ID BPR term plus lambda times the modal BPR terms."""
    hu = trace.final_user[batch.u]
    x = np.einsum("bd,bd->b", hu, trace.final_item[batch.i] - trace.final_item[batch.j])
    total = _softplus_neg(x)
    if lambda_modal:
        for m in sorted(trace.projected):
            P = trace.projected[m]
            y = np.einsum("bd,bd->b", hu, P[batch.i] - P[batch.j])
            total = total + lambda_modal * _softplus_neg(y)
    return float(total.mean())


def _scatter(out, idx, rows):
    kernels.scatter_add_rows(out, np.ascontiguousarray(idx, dtype=np.int64), np.ascontiguousarray(rows))


def gradients(
    batch: Triples,
    trace: ForwardTrace,
    item_graph,
    A_hat: CsrMatrix,
    state: ModelState,
    lambda_modal: float,
    features: dict | None = None,
    *,
    S_T: CsrMatrix | None = None,
    A_T: CsrMatrix | None = None,
) -> dict[str, np.ndarray]:
    """Gradient of :func:`bpr_loss` for every parameter of ``state``.

    ``S_T``/``A_T`` are optional precomputed transposes of the two graphs.
    """
    S = item_graph.matrix if isinstance(item_graph, ItemItemGraph) else item_graph
    S_T = transpose(S) if S_T is None else S_T
    A_T = transpose(A_hat) if A_T is None else A_T
    M, N, d = state.n_users, state.n_items, state.dim
    B = len(batch)
    hu = trace.final_user[batch.u]
    diff = trace.final_item[batch.i] - trace.final_item[batch.j]
    c = (_sigmoid(np.einsum("bd,bd->b", hu, diff)) - 1.0) / B

    g_user = np.zeros((M, d))
    g_item = np.zeros((N, d))
    _scatter(g_user, batch.u, c[:, None] * diff)
    _scatter(g_item, batch.i, c[:, None] * hu)
    _scatter(g_item, batch.j, -c[:, None] * hu)

    grads = {}
    for m, (W, b) in state.projectors.items():
        if not lambda_modal:
            grads[f"W.{m}"] = np.zeros_like(W)
            grads[f"b.{m}"] = np.zeros_like(b)
            continue
        P = trace.projected[m]
        pdiff = P[batch.i] - P[batch.j]
        cm = lambda_modal * (_sigmoid(np.einsum("bd,bd->b", hu, pdiff)) - 1.0) / B
        _scatter(g_user, batch.u, cm[:, None] * pdiff)
        X = features[m]
        X = X.features if isinstance(X, FeatureMatrix) else X
        # d loss / d P rows: +cm*hu at i, -cm*hu at j; the bias terms cancel exactly
        grads[f"W.{m}"] = (X[batch.i] - X[batch.j]).T @ (cm[:, None] * hu)
        grads[f"b.{m}"] = np.zeros_like(b)

    # item-item branch: item_mm = S^L item_emb
    g_from_mm = g_item
    for _ in range(state.L_ii):
        g_from_mm = spmm(S_T, g_from_mm)
    # user-item branch: mean over A^l h0, l = 0..L_ui
    g = np.vstack((g_user, g_item)) / (state.L_ui + 1)
    acc = g.copy()
    for _ in range(state.L_ui):
        g = spmm(A_T, g)
        acc += g
    grads["user_emb"] = acc[:M]
    grads["item_emb"] = acc[M:] + g_from_mm
    return grads


@dataclass
class FitResult:
    state: ModelState
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_recall20: float = -1.0
    item_graph: ItemItemGraph | None = None


def _feature_map(features) -> dict[str, np.ndarray]:
    if isinstance(features, dict):
        return {m: (f.features if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=np.float64)) for m, f in features.items()}
    return {f.modality: f.features for f in features}


def fit(
    dataset: SplitDataset,
    features: list[FeatureMatrix],
    config: TrainConfig = TrainConfig(),
    item_graph: ItemItemGraph | None = None,
    on_epoch=None,
) -> FitResult:
    """Train, evaluating validation R@20 after every epoch, and return the best epoch's parameters.

    ``on_epoch(row)`` is called with each log row as it is produced.
    """
    feats = _feature_map(features)
    if any(x.shape[0] != dataset.N for x in feats.values()):
        raise DatasetError("feature files do not cover every item")
    if item_graph is None:
        fm = [FeatureMatrix(m, x) for m, x in feats.items()]
        item_graph = build_frozen_graph(fm, config.k, config.alpha_v, config.weighted_graph)
    S = item_graph.matrix
    S_T = transpose(S)

    init_seq, triple_seq, prune_seq = np.random.SeedSequence(config.seed).spawn(3)
    state = init_state(dataset.M, dataset.N, {m: x.shape[1] for m, x in feats.items()}, config,
                       np.random.default_rng(init_seq))
    triple_rng = np.random.default_rng(triple_seq)
    prune_rng = np.random.default_rng(prune_seq)

    adj = build_adjacency(dataset.train)
    A_full = full_normalized(adj)
    make = EdgePruner.uniform if config.sampler == "uniform" else EdgePruner.degree_sensitive
    pruner = make(adj, config.rho, sampling=config.sampling)
    opt = AdamState(lr=config.lr)
    val_users = [u for u, s in enumerate(dataset.val) if len(s)]

    result = FitResult(state.copy(), item_graph=item_graph)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        A_hat = prune_and_normalize(adj, pruner, prune_rng)
        triples = sample_triples(dataset.train, triple_rng)
        loss_sum = 0.0
        for lo in range(0, len(triples), config.batch_size):
            batch = triples.slice(lo, lo + config.batch_size)
            trace = forward(state, S, A_hat, feats if config.lambda_modal else None)
            loss = bpr_loss(batch, trace, config.lambda_modal)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch starting at {lo}; "
                    f"max |user_emb|={np.abs(state.user_emb).max():.3g}, "
                    f"max |item_emb|={np.abs(state.item_emb).max():.3g}"
                )
            loss_sum += loss * len(batch)
            grads = gradients(batch, trace, S, A_hat, state, config.lambda_modal, feats, S_T=S_T, A_T=A_hat)
            opt.step(state.parameters(), grads)

        lists = rank_all(state, S, A_full, dataset.train, 20, val_users)
        val = metrics_from_lists(lists, dataset.val, (20,))
        row = {"epoch": epoch, "loss": loss_sum / len(triples),
               "val_recall20": val["R@20"], "val_ndcg20": val["N@20"]}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.debug("epoch %d loss %.6f val R@20 %.4f", epoch, row["loss"], row["val_recall20"])
        if row["val_recall20"] > result.best_val_recall20:
            result.best_val_recall20 = row["val_recall20"]
            result.best_epoch = epoch
            result.state = state.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    return result


def heldout_metrics(result: FitResult, dataset: SplitDataset, ks=(10, 20)) -> dict[str, float]:
    """Held-out test metrics of the best-validation parameters."""
    A_full = full_normalized(build_adjacency(dataset.train))
    return evaluate(result.state, result.item_graph, A_full, dataset, "test", ks)

