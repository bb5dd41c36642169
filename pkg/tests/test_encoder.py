import numpy as np
import pytest

from gmpt import tensor as T
from gmpt.checks import grad_case, random_graph
from gmpt.encoder import (
    EncoderConfig,
    aggregate,
    encode_graphs,
    encode_nodes,
    init_encoder,
    readout_mean,
)
from gmpt.graph import GraphBatch, permute_nodes, undirected_graph
from gmpt.tensor import ShapeError, Tensor

from conftest import path_graph


def identity_params(d, node_dim, edge_dim, K, rng):
    params = init_encoder(EncoderConfig(node_dim, edge_dim, K, d), rng)
    for k in range(K):
        for j in (0, 1):
            params[f"encoder.layers.{k}.mlp.{j}.weight"].data[:] = np.eye(d)
    return params


class TestEncodeNodes:
    def test_single_node(self, rng):
        cfg = EncoderConfig(2, 1, 2, 3)
        params = init_encoder(cfg, rng)
        g = undirected_graph([[0.3, -0.7]], [], edge_dim=1)
        x = np.array([[0.3, -0.7]])
        h = x @ params["encoder.input.weight"].data + params["encoder.input.bias"].data
        for k in range(2):
            pre = f"encoder.layers.{k}.mlp"
            h = np.maximum(h @ params[f"{pre}.0.weight"].data + params[f"{pre}.0.bias"].data, 0)
            h = h @ params[f"{pre}.1.weight"].data + params[f"{pre}.1.bias"].data
            if k == 0:
                h = np.maximum(h, 0)
        np.testing.assert_allclose(encode_nodes(g, params, cfg).data, h, atol=1e-14)

    def test_path_hand_oracle(self, rng):
        # K=1 with identity MLP: H[1] = relu(p1 + (p0 + E e01) + (p2 + E e21))
        cfg = EncoderConfig(2, 1, 1, 2)
        params = identity_params(2, 2, 1, 1, rng)
        params["encoder.input.weight"].data[:] = [[1.0, 0.0], [0.0, 2.0]]
        params["encoder.input.bias"].data[:] = [0.5, 0.0]
        params["encoder.layers.0.edge.weight"].data[:] = [[0.25, 1.0]]
        x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        g = undirected_graph(x, [(0, 1), (1, 2)], [[1.0], [3.0]])
        p = np.array([[1.5, 4.0], [3.5, 8.0], [5.5, 12.0]])
        expect = p[1] + p[0] + p[2] + (1.0 + 3.0) * np.array([0.25, 1.0])
        np.testing.assert_allclose(encode_nodes(g, params, cfg).data[1], expect, atol=1e-14)

    def test_dim_mismatch(self, rng):
        cfg = EncoderConfig(3, 1, 1, 4)
        with pytest.raises(ShapeError, match="width"):
            encode_nodes(path_graph(3, node_dim=2), init_encoder(cfg, rng), cfg)

    @pytest.mark.parametrize("arch", ["gin", "gcn-mean"])
    def test_permutation_equivariance(self, rng, arch):
        cfg = EncoderConfig(3, 2, 3, 8, arch)
        params = init_encoder(cfg, rng)
        for _ in range(10):
            g = random_graph(rng, 2, 8)
            perm = rng.permutation(g.num_nodes)
            pg = permute_nodes(g, perm, rng.permutation(g.num_edges))
            H, pH = encode_nodes(g, params, cfg).data, encode_nodes(pg, params, cfg).data
            np.testing.assert_allclose(pH, H[perm], atol=1e-9)
            np.testing.assert_allclose(readout_mean(Tensor(pH)).data, readout_mean(Tensor(H)).data, atol=1e-9)

    def test_batch_equals_separate(self, rng):
        cfg = EncoderConfig(3, 2, 2, 5)
        params = init_encoder(cfg, rng)
        gs = [random_graph(rng, 1, 6) for _ in range(4)]
        batched = encode_graphs(gs, params, cfg).data
        for i, g in enumerate(gs):
            single = readout_mean(encode_nodes(g, params, cfg)).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_gcn_mean_matches_gin_on_ring(self, rng):
        # on a 2-regular ring the mean aggregate is the sum aggregate over 2
        n = 6
        g = undirected_graph(rng.normal(size=(n, 2)), [(i, (i + 1) % n) for i in range(n)], rng.normal(size=(n, 1)))
        b = GraphBatch([g])
        h = Tensor(rng.normal(size=(n, 4)))
        E = Tensor(rng.normal(size=(1, 4)))
        gin = aggregate(b, h, E, "gin").data
        gcn = aggregate(b, h, E, "gcn-mean").data
        np.testing.assert_allclose(gcn * 2.0, gin, atol=1e-12)

    def test_gradients_through_readout(self):
        def build(rng):
            cfg = EncoderConfig(3, 2, 2, 4)
            params = init_encoder(cfg, rng)
            for k, p in params.items():
                if k.endswith("bias"):
                    p.data[:] = rng.normal(scale=0.5, size=p.shape)
            g = random_graph(rng, scale=0.5)
            w = rng.normal(size=4)
            return (lambda: T.sum_(readout_mean(encode_nodes(g, params, cfg)) * Tensor(w))), params

        assert grad_case("encoder readout", build, instances=10).max_rel_error < 1e-4


class TestReadout:
    def test_two_rows(self):
        np.testing.assert_array_equal(readout_mean(Tensor([[1.0, 3.0], [3.0, 1.0]])).data, [2.0, 2.0])

    def test_single_row(self):
        np.testing.assert_array_equal(readout_mean(Tensor([[4.0, -1.0]])).data, [4.0, -1.0])

    def test_hundred_rows_naive_sum(self, rng):
        H = rng.normal(size=(100, 3))
        naive = [sum(H[i, j] for i in range(100)) / 100 for j in range(3)]
        np.testing.assert_allclose(readout_mean(Tensor(H)).data, naive, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            readout_mean(Tensor(np.zeros((0, 3))))


class TestConfig:
    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="arch"):
            EncoderConfig(2, 1, arch="gat")

    def test_parameter_names(self, rng):
        names = set(init_encoder(EncoderConfig(2, 1, 2, 4), rng))
        assert "encoder.layers.1.edge.weight" in names and "encoder.input.bias" in names
        assert len(names) == 2 + 2 * 5
