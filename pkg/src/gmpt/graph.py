"""Attributed graphs, validation and structural operations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

SPLITS = ("train", "valid", "test")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed storage of an attributed graph.

    Undirected graphs are stored with both directions of every edge
    (see :func:`symmetrize`). ``label_mask[t]`` is True when task ``t``
    is observed.
    """

    num_nodes: int
    node_attrs: np.ndarray
    edges: np.ndarray
    edge_attrs: np.ndarray
    label: np.ndarray | None = None
    label_mask: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.node_attrs, dtype=np.float64, ndmin=2)
        if x.size == 0 and x.shape[0] != self.num_nodes:
            x = x.reshape(self.num_nodes, -1)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        ea = np.array(self.edge_attrs, dtype=np.float64)
        if ea.ndim == 1:
            ea = ea.reshape(len(ea), -1) if ea.size else ea.reshape(0, 0)
        object.__setattr__(self, "node_attrs", _frozen(x))
        object.__setattr__(self, "edges", _frozen(e))
        object.__setattr__(self, "edge_attrs", _frozen(ea))
        if self.label is not None:
            y = np.array(self.label, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "label", _frozen(y))
            if self.label_mask is None:
                mask = ~np.isnan(y)
            else:
                mask = np.array(self.label_mask, dtype=bool).reshape(-1)
            object.__setattr__(self, "label_mask", _frozen(mask))
        elif self.label_mask is not None:
            mask = np.array(self.label_mask, dtype=bool).reshape(-1)
            object.__setattr__(self, "label_mask", _frozen(mask))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def node_dim(self) -> int:
        return self.node_attrs.shape[1]

    @property
    def edge_dim(self) -> int:
        if self.edge_attrs.ndim == 2 and self.edge_attrs.shape[1] > 0:
            return self.edge_attrs.shape[1]
        return 0

    @property
    def num_tasks(self) -> int:
        return 0 if self.label is None else len(self.label)

    def replace(self, **changes) -> "Graph":
        fields = dict(
            num_nodes=self.num_nodes,
            node_attrs=self.node_attrs,
            edges=self.edges,
            edge_attrs=self.edge_attrs,
            label=self.label,
            label_mask=self.label_mask,
        )
        fields.update(changes)
        return Graph(**fields)

    def same_as(self, other: "Graph") -> bool:
        """Bitwise equality of every field."""
        if self.num_nodes != other.num_nodes:
            return False
        pairs = [
            (self.node_attrs, other.node_attrs),
            (self.edges, other.edges),
            (self.edge_attrs, other.edge_attrs),
            (self.label, other.label),
            (self.label_mask, other.label_mask),
        ]
        for a, b in pairs:
            if (a is None) != (b is None):
                return False
            if a is not None:
                if a.shape != b.shape:
                    return False
                if a.dtype.kind == "f":
                    if not np.array_equal(a.view(np.int64), b.view(np.int64)):
                        return False
                elif not np.array_equal(a, b):
                    return False
        return True


def validate(g: Graph) -> list[str]:
    """Return the invariants ``g`` violates; an empty list means valid."""
    problems = []
    if g.num_nodes < 1:
        problems.append("graph has no nodes")
    if g.node_attrs.shape[0] != g.num_nodes:
        problems.append(
            f"node attr misalignment: {g.node_attrs.shape[0]} rows for {g.num_nodes} nodes"
        )
    if len(g.edges) and (g.edges.min() < 0 or g.edges.max() >= g.num_nodes):
        problems.append("endpoint out of range")
    n_attr_rows = g.edge_attrs.shape[0] if g.edge_attrs.ndim else 0
    if n_attr_rows != g.num_edges:
        problems.append(
            f"edge attr misalignment: {n_attr_rows} rows for {g.num_edges} edges"
        )
    if not np.all(np.isfinite(g.node_attrs)) or not np.all(np.isfinite(g.edge_attrs)):
        problems.append("non-finite attribute")
    if g.label is not None and g.label_mask is not None and len(g.label) != len(g.label_mask):
        problems.append("label and label_mask lengths differ")
    return problems


def is_symmetric(g: Graph) -> bool:
    index = {}
    for i, (u, v) in enumerate(g.edges.tolist()):
        index[(u, v)] = i
    for (u, v), i in index.items():
        j = index.get((v, u))
        if j is None or not np.array_equal(g.edge_attrs[i], g.edge_attrs[j]):
            return False
    return True


def symmetrize(g: Graph) -> Graph:
    """Add the reverse of every non-loop edge that lacks one.

    Existing edges keep their order; missing reverses are appended in the
    order of their forward edge, so already-symmetric input is returned
    unchanged.
    """
    seen: dict[tuple[int, int], int] = {}
    for i, (u, v) in enumerate(g.edges.tolist()):
        if (u, v) in seen:
            raise ValueError(f"duplicate edge ({u}, {v})")
        seen[(u, v)] = i
    extra_edges, extra_rows = [], []
    for (u, v), i in seen.items():
        if u == v:
            continue
        j = seen.get((v, u))
        if j is None:
            extra_edges.append((v, u))
            extra_rows.append(i)
        elif not np.array_equal(g.edge_attrs[i], g.edge_attrs[j]):
            raise ValueError(f"edges ({u}, {v}) and ({v}, {u}) carry different attributes")
    if not extra_edges:
        return g
    edges = np.concatenate([g.edges, np.array(extra_edges, dtype=np.int64)])
    edge_attrs = np.concatenate([g.edge_attrs, g.edge_attrs[extra_rows]])
    return g.replace(edges=edges, edge_attrs=edge_attrs)


def neighbors(g: Graph, v: int) -> list[tuple[int, int]]:
    """Out-edges of ``v`` as ``(neighbor, edge index)`` in stored order."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range for {g.num_nodes}-node graph")
    idx = np.flatnonzero(g.edges[:, 0] == v)
    return [(int(g.edges[i, 1]), int(i)) for i in idx]


def induced_subgraph(g: Graph, keep: Iterable[int]) -> Graph:
    keep = np.unique(np.fromiter(keep, dtype=np.int64))
    if keep.size == 0:
        raise ValueError("empty subgraph")
    if keep[0] < 0 or keep[-1] >= g.num_nodes:
        raise IndexError("kept node out of range")
    new_id = np.full(g.num_nodes, -1, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    if g.num_edges:
        mapped = new_id[g.edges]
        alive = (mapped >= 0).all(axis=1)
        edges, edge_attrs = mapped[alive], g.edge_attrs[alive]
    else:
        edges, edge_attrs = g.edges, g.edge_attrs
    return g.replace(
        num_nodes=int(keep.size),
        node_attrs=g.node_attrs[keep],
        edges=edges,
        edge_attrs=edge_attrs,
    )


def permute_nodes(g: Graph, perm: Sequence[int], edge_order: Sequence[int] | None = None) -> Graph:
    """Relabel nodes so old node ``perm[i]`` becomes node ``i``; optionally
    also reorder the stored edge list."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.num_nodes)):
        raise ValueError("perm must be a permutation of the node ids")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    edges, attrs = inv[g.edges], g.edge_attrs
    if edge_order is not None:
        edges, attrs = edges[np.asarray(edge_order)], attrs[np.asarray(edge_order)]
    return g.replace(node_attrs=g.node_attrs[perm], edges=edges, edge_attrs=attrs)


def undirected_graph(
    node_attrs,
    edges: Sequence[tuple[int, int]] = (),
    edge_attrs=None,
    edge_dim: int = 1,
    label=None,
    label_mask=None,
) -> Graph:
    """Build a symmetrized graph from each undirected edge listed once.

    Missing ``edge_attrs`` default to all-ones rows of width ``edge_dim``.
    """
    x = np.array(node_attrs, dtype=np.float64, ndmin=2)
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    if edge_attrs is None:
        edge_attrs = np.ones((len(e), edge_dim))
    ea = np.array(edge_attrs, dtype=np.float64).reshape(len(e), -1) if len(e) else np.zeros((0, edge_dim))
    g = Graph(x.shape[0], x, e, ea, label=label, label_mask=label_mask)
    problems = validate(g)
    if problems:
        raise ValueError("; ".join(problems))
    return symmetrize(g)


@dataclass(eq=False)
class GraphDataset:
    graphs: list[Graph]
    splits: list[str]
    node_dim: int = field(init=False)
    edge_dim: int = field(init=False)
    num_tasks: int = field(init=False)

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("empty dataset")
        if len(self.splits) != len(self.graphs):
            raise ValueError("one split tag per graph required")
        for tag in self.splits:
            if tag not in SPLITS:
                raise ValueError(f"unknown split tag {tag!r}")
        self.node_dim = self.graphs[0].node_dim
        self.edge_dim = max(g.edge_dim for g in self.graphs)
        tasks = {g.num_tasks for g in self.graphs if g.label is not None}
        if len(tasks) > 1:
            raise ValueError(f"inconsistent task counts {sorted(tasks)}")
        self.num_tasks = tasks.pop() if tasks else 0
        for i, g in enumerate(self.graphs):
            if g.node_dim != self.node_dim:
                raise ValueError(f"graph {i}: node dim {g.node_dim} != {self.node_dim}")
            if g.num_edges and g.edge_dim != self.edge_dim:
                raise ValueError(f"graph {i}: edge dim {g.edge_dim} != {self.edge_dim}")

    def __len__(self) -> int:
        return len(self.graphs)

    def split(self, tag: str) -> list[Graph]:
        return [g for g, s in zip(self.graphs, self.splits) if s == tag]


class GraphBatch:
    """Disjoint union of graphs, prepared for message passing.

    ``adjacency[t, s]`` counts edges ``s -> t`` so that ``adjacency @ H``
    sums incoming neighbor rows, and ``edge_sum[t]`` is the sum of the
    attributes of the edges entering ``t``.
    """

    def __init__(self, graphs: Sequence[Graph], edge_dim: int | None = None):
        if not graphs:
            raise ValueError("empty batch")
        self.graphs = list(graphs)
        self.sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.num_nodes = int(self.offsets[-1])
        self.num_graphs = len(graphs)
        if edge_dim is None:
            edge_dim = max(g.edge_dim for g in graphs)
        self.edge_dim = edge_dim
        self.node_attrs = np.concatenate([g.node_attrs for g in graphs])
        self.graph_index = np.repeat(np.arange(self.num_graphs), self.sizes)

        src, dst, eattr = [], [], []
        for g, off in zip(graphs, self.offsets[:-1]):
            if g.num_edges:
                src.append(g.edges[:, 0] + off)
                dst.append(g.edges[:, 1] + off)
                eattr.append(g.edge_attrs)
        n = self.num_nodes
        if src:
            src = np.concatenate(src)
            dst = np.concatenate(dst)
            eattr = np.concatenate(eattr)
        else:
            src = dst = np.zeros(0, dtype=np.int64)
            eattr = np.zeros((0, edge_dim))
        self.adjacency = sp.csr_matrix(
            (np.ones(len(src)), (dst, src)), shape=(n, n), dtype=np.float64
        )
        self.in_degree = np.bincount(dst, minlength=n).astype(np.float64)
        incidence = sp.csr_matrix(
            (np.ones(len(dst)), (dst, np.arange(len(dst)))), shape=(n, len(dst))
        )
        self.edge_sum = np.asarray(incidence @ eattr) if len(dst) else np.zeros((n, edge_dim))
        self._mean_pool = None

    def node_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def mean_pool(self) -> sp.csr_matrix:
        """``num_graphs x num_nodes`` matrix averaging each graph's rows."""
        if self._mean_pool is None:
            w = 1.0 / self.sizes[self.graph_index]
            self._mean_pool = sp.csr_matrix(
                (w, (self.graph_index, np.arange(self.num_nodes))),
                shape=(self.num_graphs, self.num_nodes),
            )
        return self._mean_pool
