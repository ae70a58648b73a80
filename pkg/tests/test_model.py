import numpy as np
import pytest

from freedomrec.errors import DimensionError, FormatError
from freedomrec.evaluation import rank_all
from freedomrec.interaction_graph import InteractionMatrix, build_adjacency
from freedomrec.model import (
    ModelState,
    forward,
    fuse_representations,
    load_checkpoint,
    project_modality,
    propagate_item_item,
    propagate_user_item,
    save_checkpoint,
    score,
)
from freedomrec.sparse_core import CsrMatrix, normalize_sym


def random_item_graph(rng, n):
    a = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    np.fill_diagonal(a, 1.0)
    return CsrMatrix.from_dense(a)


def random_setup(rng, M=5, N=6, d=4):
    mask = rng.random((M, N)) < 0.5
    mask[np.arange(M), np.arange(M) % N] = True
    u, i = np.nonzero(mask)
    R = InteractionMatrix.from_pairs(u, i, M, N)
    A_hat = build_adjacency(R).normalized
    S = normalize_sym(random_item_graph(rng, N))
    feats = {"visual": rng.random((N, 7)), "textual": rng.random((N, 3))}
    state = ModelState(
        rng.standard_normal((M, d)),
        rng.standard_normal((N, d)),
        {m: (rng.standard_normal((x.shape[1], d)), rng.standard_normal(d)) for m, x in feats.items()},
    )
    return R, A_hat, S, feats, state


class TestItemItem:
    @pytest.mark.parametrize("L", [0, 1, 3])
    def test_identity_graph(self, rng, L):
        x = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(propagate_item_item(CsrMatrix.identity(4), x, L), x)

    def test_zero_layers(self, rng):
        x = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(propagate_item_item(random_item_graph(rng, 4), x, 0), x)

    def test_one_layer_oracle(self, rng):
        s = random_item_graph(rng, 4)
        x = rng.standard_normal((4, 3))
        np.testing.assert_allclose(propagate_item_item(s, x, 1), s.to_dense() @ x, atol=1e-12)

    def test_graph_untouched(self, rng):
        s = random_item_graph(rng, 4)
        before = s.data.copy()
        propagate_item_item(s, rng.standard_normal((4, 2)), 3)
        np.testing.assert_array_equal(s.data, before)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            propagate_item_item(CsrMatrix.identity(3), np.ones((4, 2)), 1)


class TestUserItem:
    def test_zero_adjacency(self, rng):
        u, i = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
        ru, ri = propagate_user_item(CsrMatrix.zeros(5, 5), u, i, 2)
        np.testing.assert_allclose(ru, u / 3, atol=1e-15)
        np.testing.assert_allclose(ri, i / 3, atol=1e-15)

    def test_zero_layers(self, rng):
        u, i = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
        ru, ri = propagate_user_item(CsrMatrix.zeros(5, 5), u, i, 0)
        np.testing.assert_array_equal(ru, u)
        np.testing.assert_array_equal(ri, i)

    def test_unrolled_oracle(self, rng):
        R = InteractionMatrix.from_pairs([0, 0, 1, 2], [0, 1, 1, 0], 3, 2)
        A = build_adjacency(R).normalized.to_dense()
        u, i = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
        h0 = np.vstack((u, i))
        h1 = A @ h0
        h2 = A @ h1
        want = (h0 + h1 + h2) / 3
        ru, ri = propagate_user_item(CsrMatrix.from_dense(A), u, i, 2)
        np.testing.assert_allclose(np.vstack((ru, ri)), want, atol=1e-12)


class TestFuseProjectScore:
    def test_fuse(self, rng):
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        z = np.zeros((3, 2))
        np.testing.assert_array_equal(fuse_representations(None, a, z)[1], a)
        np.testing.assert_array_equal(fuse_representations(None, z, b)[1], b)
        np.testing.assert_array_equal(fuse_representations(None, a, b)[1], a + b)

    def test_project(self, rng):
        x = rng.standard_normal((4, 3))
        b = rng.standard_normal(2)
        out = project_modality(x, np.zeros((3, 2)), b)
        np.testing.assert_array_equal(out, np.tile(b, (4, 1)))
        np.testing.assert_array_equal(project_modality(x, np.eye(3), np.zeros(3)), x)
        W = rng.standard_normal((3, 2))
        np.testing.assert_allclose(project_modality(x, W, b), x @ W + b, atol=1e-12)

    def test_score(self, rng):
        assert score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        e = np.array([0.6, 0.8])
        assert score(e, e) == pytest.approx(1.0, abs=1e-15)
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        assert score(a, b) == pytest.approx(sum(x * y for x, y in zip(a, b)), abs=1e-12)


class TestForward:
    def test_linearity(self, rng):
        _, A_hat, S, _, state = random_setup(rng)
        t1 = forward(state, S, A_hat)
        doubled = ModelState(2 * state.user_emb, 2 * state.item_emb, state.projectors)
        t2 = forward(doubled, S, A_hat)
        np.testing.assert_allclose(t2.final_user, 2 * t1.final_user, atol=1e-12)
        np.testing.assert_allclose(t2.final_item, 2 * t1.final_item, atol=1e-12)
        np.testing.assert_allclose(t2.final_user @ t2.final_item.T, 4 * (t1.final_user @ t1.final_item.T), atol=1e-11)

    def test_item_sum_consistency(self, rng):
        _, A_hat, S, feats, state = random_setup(rng)
        t = forward(state, S, A_hat, feats)
        np.testing.assert_allclose(t.final_item - t.item_rep_ui, t.item_mm, atol=1e-12)
        assert set(t.projected) == {"visual", "textual"}

    def test_projection_does_not_affect_rankings(self, rng):
        R, A_hat, S, _, state = random_setup(rng)
        before = rank_all(state, S, A_hat, R, 3)
        perturbed = state.copy()
        for W, b in perturbed.projectors.values():
            W += rng.standard_normal(W.shape) * 10
            b += 5.0
        after = rank_all(perturbed, S, A_hat, R, 3)
        assert before.keys() == after.keys()
        for u in before:
            np.testing.assert_array_equal(before[u], after[u])

    def test_state_shape_checks(self, rng):
        with pytest.raises(DimensionError):
            ModelState(np.zeros((2, 3)), np.zeros((2, 4)))
        with pytest.raises(DimensionError):
            ModelState(np.zeros((2, 3)), np.zeros((2, 3)), {"visual": (np.zeros((5, 3)), np.zeros(2))})


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        *_, state = random_setup(rng)
        state.L_ui, state.L_ii = 3, 2
        save_checkpoint(tmp_path / "m.frdm", state)
        back = load_checkpoint(tmp_path / "m.frdm")
        assert (back.L_ui, back.L_ii) == (3, 2)
        for name, arr in state.parameters().items():
            np.testing.assert_array_equal(back.parameters()[name], arr)

    def test_header(self, tmp_path, rng):
        *_, state = random_setup(rng, M=5, N=6, d=4)
        save_checkpoint(tmp_path / "m.frdm", state)
        raw = (tmp_path / "m.frdm").read_bytes()
        assert raw[:4] == b"FRDM"
        assert np.frombuffer(raw[4:20], dtype="<u4").tolist() == [1, 5, 6, 4]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x")

    def test_truncated(self, tmp_path, rng):
        *_, state = random_setup(rng)
        save_checkpoint(tmp_path / "m.frdm", state)
        raw = (tmp_path / "m.frdm").read_bytes()
        (tmp_path / "m.frdm").write_bytes(raw[:30])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "m.frdm")
