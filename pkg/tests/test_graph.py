import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmpt.graph import (
    Graph,
    GraphBatch,
    GraphDataset,
    induced_subgraph,
    is_symmetric,
    neighbors,
    permute_nodes,
    symmetrize,
    undirected_graph,
    validate,
)

from conftest import path_graph, star_graph


def raw(n, edges, edge_attrs=None, d_v=2, d_e=1):
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    ea = np.ones((len(e), d_e)) if edge_attrs is None else np.asarray(edge_attrs, dtype=float)
    return Graph(n, np.zeros((n, d_v)), e, ea)


@st.composite
def edge_lists(draw, max_nodes=8):
    n = draw(st.integers(1, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return n, chosen


class TestValidate:
    def test_single_node_is_valid(self):
        assert validate(raw(1, [])) == []

    def test_endpoint_out_of_range(self):
        problems = validate(raw(3, [(0, 5)]))
        assert any("endpoint out of range" in p for p in problems)

    def test_edge_attr_misalignment(self):
        g = raw(3, [(0, 1), (1, 2), (0, 2)], edge_attrs=np.ones((2, 1)))
        assert any("edge attr misalignment" in p for p in validate(g))

    def test_label_mask_length(self):
        g = Graph(2, np.zeros((2, 1)), np.zeros((0, 2), np.int64), np.zeros((0, 1)),
                  label=np.array([1.0, 0.0]), label_mask=np.array([True]))
        assert validate(g)

    def test_mask_derived_from_nan(self):
        g = Graph(1, np.zeros((1, 1)), np.zeros((0, 2), np.int64), np.zeros((0, 1)), label=np.array([1.0, np.nan]))
        assert g.label_mask.tolist() == [True, False]

    def test_arrays_are_read_only(self):
        g = path_graph()
        with pytest.raises(ValueError):
            g.node_attrs[0, 0] = 5.0


class TestSymmetrize:
    def test_adds_reverse(self):
        g = symmetrize(raw(2, [(0, 1)]))
        assert {tuple(e) for e in g.edges.tolist()} == {(0, 1), (1, 0)}

    def test_already_symmetric_identical(self):
        g = symmetrize(raw(2, [(0, 1)]))
        assert symmetrize(g).same_as(g)

    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError, match="duplicate edge"):
            symmetrize(raw(2, [(0, 1), (0, 1)]))

    def test_asymmetric_attrs_rejected(self):
        with pytest.raises(ValueError):
            symmetrize(raw(2, [(0, 1), (1, 0)], edge_attrs=[[1.0], [2.0]]))

    @settings(max_examples=50, deadline=None)
    @given(edge_lists())
    def test_idempotent(self, ne):
        n, edges = ne
        once = symmetrize(raw(n, edges))
        assert is_symmetric(once)
        assert symmetrize(once).same_as(once)
        assert once.num_edges == 2 * len(edges)


class TestNeighbors:
    def test_path_middle(self):
        assert sorted(v for v, _ in neighbors(path_graph(3), 1)) == [0, 2]

    def test_isolated(self):
        g = undirected_graph(np.zeros((3, 1)), [(0, 1)])
        assert neighbors(g, 2) == []

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_star_center(self, k):
        assert len(neighbors(star_graph(k), 0)) == k

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            neighbors(path_graph(3), 3)

    @settings(max_examples=50, deadline=None)
    @given(edge_lists())
    def test_degrees_sum_to_edge_count(self, ne):
        n, edges = ne
        g = symmetrize(raw(n, edges))
        assert sum(len(neighbors(g, v)) for v in range(n)) == g.num_edges


class TestInducedSubgraph:
    def test_keep_all(self):
        g = path_graph(4)
        assert induced_subgraph(g, range(4)).same_as(g)

    def test_triangle_keep_two(self):
        tri = undirected_graph(np.zeros((3, 1)), [(0, 1), (1, 2), (0, 2)])
        sub = induced_subgraph(tri, [0, 1])
        assert sub.num_nodes == 2
        assert {tuple(e) for e in sub.edges.tolist()} == {(0, 1), (1, 0)}

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty subgraph"):
            induced_subgraph(path_graph(3), [])

    def test_random_matches_brute_force_filter(self, rng):
        n = 10
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
        g = undirected_graph(rng.normal(size=(n, 2)), edges)
        keep = sorted(rng.choice(n, 5, replace=False).tolist())
        sub = induced_subgraph(g, keep)
        new = {old: i for i, old in enumerate(keep)}
        expect = {(new[u], new[v]) for u, v in g.edges.tolist() if u in new and v in new}
        assert {tuple(e) for e in sub.edges.tolist()} == expect
        assert validate(sub) == []
        np.testing.assert_array_equal(sub.node_attrs, g.node_attrs[keep])


class TestPermute:
    def test_round_trip(self, rng):
        g = path_graph(5)
        perm = rng.permutation(5)
        back = permute_nodes(permute_nodes(g, perm), np.argsort(perm))
        assert back.same_as(g)

    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            permute_nodes(path_graph(3), [0, 0, 1])


class TestDataset:
    def test_dims(self):
        ds = GraphDataset([path_graph(3), path_graph(2)], ["train", "test"])
        assert (ds.node_dim, ds.edge_dim) == (2, 1)
        assert len(ds.split("test")) == 1

    def test_inconsistent_node_dim(self):
        with pytest.raises(ValueError):
            GraphDataset([path_graph(3, node_dim=2), path_graph(3, node_dim=3)], ["train", "train"])

    def test_bad_split_tag(self):
        with pytest.raises(ValueError):
            GraphDataset([path_graph(3)], ["holdout"])


class TestGraphBatch:
    def test_offsets_and_adjacency(self):
        b = GraphBatch([path_graph(2), path_graph(3)])
        assert b.offsets.tolist() == [0, 2, 5]
        assert b.adjacency.shape == (5, 5)
        # no cross-graph entries
        assert b.adjacency[:2, 2:].nnz == 0
        assert b.in_degree.tolist() == [1, 1, 1, 2, 1]

    def test_mean_pool_rows_sum_to_one(self):
        b = GraphBatch([path_graph(2), path_graph(4)])
        np.testing.assert_allclose(np.asarray(b.mean_pool.sum(axis=1)).ravel(), 1.0)
