import math

import numpy as np
import pytest

from gmpt import tensor as T
from gmpt.checks import grad_case, random_graph, random_model
from gmpt.encoder import EncoderConfig
from gmpt.graph import permute_nodes, undirected_graph
from gmpt.matcher import (
    GraphMatchingModel,
    MatcherConfig,
    WorkCounters,
    inter_attention,
    inter_messages,
    intra_messages,
    match_pair,
    update_nodes,
)
from gmpt.objectives import pair_similarity
from gmpt.tensor import Tensor

from conftest import path_graph


def reference_similarity(model, g1, g2):
    """Straight-line numpy evaluation of encoder, one matching round,
    mean readout and dot similarity."""
    P = {k: v.data for k, v in model.params.items()}
    K = model.encoder.num_layers

    def adj(g):
        A = np.zeros((g.num_nodes, g.num_nodes))
        E = np.zeros((g.num_nodes, g.edge_attrs.shape[1]))
        for (u, v), e in zip(g.edges.tolist(), g.edge_attrs):
            A[v, u] += 1
            E[v] += e
        return A, E

    def mlp(x, pre):
        h = np.maximum(x @ P[f"{pre}.0.weight"] + P[f"{pre}.0.bias"], 0)
        return h @ P[f"{pre}.1.weight"] + P[f"{pre}.1.bias"]

    def encode(g):
        A, E = adj(g)
        h = g.node_attrs @ P["encoder.input.weight"] + P["encoder.input.bias"]
        for k in range(K):
            h = mlp(h + A @ h + E @ P[f"encoder.layers.{k}.edge.weight"], f"encoder.layers.{k}.mlp")
            if k < K - 1:
                h = np.maximum(h, 0)
        return h, A @ h + E @ P["matcher.edge.weight"]

    def attn(src, tgt):
        s = src @ tgt.T
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    H1, M1 = encode(g1)
    H2, M2 = encode(g2)
    A12, A21 = attn(H1, H2), attn(H2, H1)
    Z1 = mlp(np.concatenate([H1, M1, A21.T @ H2], axis=1), "matcher.update")
    Z2 = mlp(np.concatenate([H2, M2, A12.T @ H1], axis=1), "matcher.update")
    return float(Z1.mean(axis=0) @ Z2.mean(axis=0))


class TestAttention:
    def test_hand_softmax(self):
        A = inter_attention(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]))
        e = math.e
        np.testing.assert_allclose(A.data, [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
        np.testing.assert_allclose(A.data, [[0.7311, 0.2689]], atol=1e-4)

    def test_equal_targets_uniform(self, rng):
        A = inter_attention(Tensor(rng.normal(size=(4, 3))), Tensor(np.tile(rng.normal(size=3), (5, 1))))
        np.testing.assert_allclose(A.data, 0.2, atol=1e-12)

    def test_single_target(self, rng):
        A = inter_attention(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(1, 3))))
        np.testing.assert_array_equal(A.data, np.ones((4, 1)))

    def test_cosine_similarity_mode(self):
        A = inter_attention(Tensor([[2.0, 0.0]]), Tensor([[5.0, 0.0], [0.0, 3.0]]), sim="cosine")
        e = math.e
        np.testing.assert_allclose(A.data, [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)

    def test_target_normalization_columns(self, rng):
        A = inter_attention(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(3, 3))), normalize_target=True)
        np.testing.assert_allclose(A.data.sum(axis=0), 1.0, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            inter_attention(Tensor(np.zeros((0, 2))), Tensor(np.ones((2, 2))))


class TestMessages:
    def test_uniform_attention_message(self, rng):
        Hs = rng.normal(size=(3, 2))
        A = inter_attention(Tensor(Hs), Tensor(np.ones((4, 2))))
        M = inter_messages(Tensor(Hs), A).data
        np.testing.assert_allclose(M, np.tile(Hs.sum(axis=0) / 4, (4, 1)), atol=1e-12)

    def test_single_source_single_target(self, rng):
        Hs = rng.normal(size=(1, 3))
        A = inter_attention(Tensor(Hs), Tensor(rng.normal(size=(1, 3))))
        np.testing.assert_array_equal(A.data, [[1.0]])
        np.testing.assert_allclose(inter_messages(Tensor(Hs), A).data, Hs, atol=1e-15)

    def test_single_source_splits_over_targets(self, rng):
        # source-side normalization: the source's h is shared out across targets
        Hs = rng.normal(size=(1, 3))
        A = inter_attention(Tensor(Hs), Tensor(rng.normal(size=(4, 3))))
        M = inter_messages(Tensor(Hs), A).data
        np.testing.assert_allclose(M, A.data.T * Hs, atol=1e-15)
        np.testing.assert_allclose(M.sum(axis=0), Hs[0], atol=1e-12)

    def test_zero_sources(self, rng):
        A = Tensor(rng.random((3, 2)))
        assert not inter_messages(Tensor(np.zeros((3, 4))), A).data.any()

    def test_intra_isolated_and_path(self, rng):
        g = undirected_graph(np.zeros((4, 1)), [(0, 1), (1, 2)], np.zeros((2, 1)))
        H = rng.normal(size=(4, 3))
        params = {"matcher.edge.weight": Tensor(rng.normal(size=(1, 3)))}
        M = intra_messages(g, Tensor(H), params).data
        np.testing.assert_allclose(M[1], H[0] + H[2], atol=1e-14)
        assert not M[3].any()
        np.testing.assert_allclose(intra_messages(g, Tensor(2 * H), params).data, 2 * M, atol=1e-14)

    def test_update_identity_blocks(self, rng):
        d = 3
        eye = np.eye(d)
        params = {
            "matcher.update.0.weight": Tensor(np.vstack([eye, eye, eye])),
            "matcher.update.0.bias": Tensor(np.zeros(d)),
            "matcher.update.1.weight": Tensor(eye),
            "matcher.update.1.bias": Tensor(np.zeros(d)),
        }
        H, Mi, Mx = (rng.random((4, d)) for _ in range(3))
        Z = update_nodes(Tensor(H), Tensor(Mi), Tensor(Mx), params).data
        np.testing.assert_allclose(Z, H + Mi + Mx, atol=1e-14)
        zero = update_nodes(Tensor(np.zeros((2, d))), Tensor(np.zeros((2, d))), Tensor(np.zeros((2, d))), params)
        assert not zero.data.any()


class TestMatchPair:
    def test_self_match_symmetric(self, rng):
        model = random_model(rng, hidden=8)
        g = random_graph(rng, 3, 6)
        m = match_pair(g, g, model)
        np.testing.assert_allclose(m.z1.data, m.z2.data, atol=1e-9)

    def test_sim_op_count(self, rng):
        model = random_model(rng, hidden=4)
        g1, g2 = random_graph(rng, 3, 3), random_graph(rng, 5, 5)
        c = WorkCounters()
        m = model.match_pair(g1, g2, c)
        assert m.sim_op_count == c.sim_ops == 2 * 3 * 5

    def test_pair_similarity_reference(self, rng):
        for _ in range(5):
            model = random_model(rng, hidden=4)
            g1, g2 = random_graph(rng, 3, 3), random_graph(rng, 3, 3)
            s = pair_similarity(g1, g2, model).item()
            assert s == pytest.approx(reference_similarity(model, g1, g2), abs=1e-12)

    def test_pair_similarity_deterministic(self, rng):
        model = random_model(rng)
        g1, g2 = random_graph(rng), random_graph(rng)
        a, b = pair_similarity(g1, g2, model), pair_similarity(g1, g2, model)
        assert a.data.tobytes() == b.data.tobytes()

    def test_permuting_either_graph(self, rng):
        model = random_model(rng, hidden=8)
        for _ in range(10):
            g1, g2 = random_graph(rng, 2, 6), random_graph(rng, 2, 6)
            base = match_pair(g1, g2, model)
            p1 = permute_nodes(g1, rng.permutation(g1.num_nodes))
            m = match_pair(p1, g2, model)
            np.testing.assert_allclose(m.z1.data, base.z1.data, atol=1e-9)
            np.testing.assert_allclose(m.z2.data, base.z2.data, atol=1e-9)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            GraphMatchingModel.create(EncoderConfig(2, 1, hidden=4), MatcherConfig(8, 1))

    @pytest.mark.parametrize("norm", [False, True])
    @pytest.mark.parametrize("sim", ["dot", "cosine"])
    def test_anchor_batch_equals_pairs(self, rng, sim, norm):
        enc = EncoderConfig(3, 2, 2, 6)
        model = GraphMatchingModel.create(enc, MatcherConfig(6, 2, sim, norm), seed=3)
        graphs = [random_graph(rng, 1, 6) for _ in range(5)]
        batch = model.batch(graphs)
        H, M = model.encode(batch)
        za, zo, sims = model.match_anchor(batch, H, M, 2)
        for j, k in enumerate([0, 1, 3, 4]):
            m = model.match_pair(graphs[2], graphs[k])
            np.testing.assert_allclose(za.data[j], m.z1.data, atol=1e-12)
            np.testing.assert_allclose(zo.data[j], m.z2.data, atol=1e-12)
            assert sims.data[j] == pytest.approx(model.similarity(m.z1, m.z2).item(), abs=1e-10)

    def test_anchor_charges_same_work_as_pairs(self, rng):
        model = random_model(rng)
        graphs = [random_graph(rng, 2, 5) for _ in range(4)]
        batch = model.batch(graphs)
        H, M = model.encode(batch)
        c1, c2 = WorkCounters(), WorkCounters()
        model.match_anchor(batch, H, M, 0, c1)
        for k in (1, 2, 3):
            model.match_pair(graphs[0], graphs[k], c2)
        assert c1.sim_ops == c2.sim_ops

    def test_live_entries_released_on_backward(self, rng):
        model = random_model(rng)
        c = WorkCounters()
        m = model.match_pair(random_graph(rng, 3, 3), random_graph(rng, 4, 4), c)
        assert c.live_entries == 24
        T.backward(model.similarity(m.z1, m.z2))
        assert c.live_entries == 0 and c.peak_entries == 24

    def test_similarity_gradcheck(self):
        def build(rng):
            model = random_model(rng)
            g1, g2 = random_graph(rng, scale=0.5), random_graph(rng, scale=0.5)
            return (lambda: pair_similarity(g1, g2, model)), model.params

        assert grad_case("pair similarity", build, instances=10).max_rel_error < 1e-4
