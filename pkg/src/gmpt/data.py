"""Line-delimited JSON graph datasets and the synthetic motif benchmark."""
from __future__ import annotations

import json
import math
from itertools import combinations
from pathlib import Path

import numpy as np

from .graph import Graph, GraphDataset, symmetrize, validate


class DataError(ValueError):
    """A dataset file could not be parsed or violates graph invariants."""


def graph_to_record(g: Graph, split: str | None = None) -> dict:
    """Each undirected edge is written once, as stored with ``src <= dst``."""
    edges, attrs = [], []
    for (u, v), a in zip(g.edges.tolist(), g.edge_attrs.tolist()):
        if u <= v:
            edges.append([u, v])
            attrs.append(a)
    rec = {"nodes": g.node_attrs.tolist(), "edges": edges, "edge_attrs": attrs}
    if g.label is not None:
        rec["label"] = [None if not m else float(y) for y, m in zip(g.label.tolist(), g.label_mask.tolist())]
    if split is not None:
        rec["split"] = split
    return rec


def record_to_graph(rec: dict, edge_dim: int | None = None) -> tuple[Graph, str]:
    unknown = set(rec) - {"nodes", "edges", "edge_attrs", "label", "split"}
    if unknown:
        raise DataError(f"unknown keys {sorted(unknown)}")
    nodes = np.array(rec["nodes"], dtype=np.float64)
    if nodes.ndim != 2 or nodes.shape[0] == 0:
        raise DataError("'nodes' must be a non-empty list of attribute vectors")
    edges = np.array(rec.get("edges", []), dtype=np.int64).reshape(-1, 2)
    attrs = rec.get("edge_attrs", [])
    if len(attrs):
        edge_attrs = np.array(attrs, dtype=np.float64)
        if edge_attrs.ndim != 2:
            raise DataError("'edge_attrs' must be a list of vectors")
    else:
        edge_attrs = np.zeros((0, edge_dim or 0))
    label = mask = None
    if rec.get("label") is not None:
        raw = rec["label"]
        mask = np.array([v is not None for v in raw], dtype=bool)
        label = np.array([np.nan if v is None else float(v) for v in raw], dtype=np.float64)
    g = Graph(len(nodes), nodes, edges, edge_attrs, label=label, label_mask=mask)
    problems = validate(g)
    if problems:
        raise DataError("; ".join(problems))
    try:
        g = symmetrize(g)
    except ValueError as e:
        raise DataError(str(e)) from None
    return g, rec.get("split", "train")


def save_dataset(dataset: GraphDataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for g, split in zip(dataset.graphs, dataset.splits):
            fh.write(json.dumps(graph_to_record(g, split)) + "\n")


def load_dataset(path: str | Path) -> GraphDataset:
    graphs, splits = [], []
    edge_dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DataError("record is not an object")
                g, split = record_to_graph(rec, edge_dim)
            except (json.JSONDecodeError, DataError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
            if edge_dim is None and g.num_edges:
                edge_dim = g.edge_dim
            graphs.append(g)
            splits.append(split)
    if not graphs:
        raise DataError(f"{path}: empty dataset")
    if edge_dim:
        graphs = [
            g.replace(edge_attrs=np.zeros((0, edge_dim))) if g.num_edges == 0 else g for g in graphs
        ]
    try:
        return GraphDataset(graphs, splits)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# synthetic benchmark

MOTIFS = {
    "triangle": (3, [(0, 1), (1, 2), (0, 2)]),
    "4-star": (5, [(0, 1), (0, 2), (0, 3), (0, 4)]),
    "4-clique": (4, list(combinations(range(4), 2))),
}
MOTIF_NAMES = tuple(MOTIFS)

PRETRAIN_SIZES = (10, 40)
TRAIN_SIZES = (10, 20)
VALID_SIZES = (21, 24)
TEST_SIZES = (25, 40)


def count_triangles(num_nodes: int, edges) -> int:
    adj = [set() for _ in range(num_nodes)]
    for u, v in edges:
        if u != v:
            adj[u].add(v)
            adj[v].add(u)
    return sum(
        1 for u in range(num_nodes) for v in adj[u] if v > u for w in adj[v] if w > v and w in adj[u]
    )


def planted_graph(
    rng: np.random.Generator,
    num_nodes: int,
    plant: tuple[bool, ...],
    mean_degree: float = 3.0,
    attr_noise: float = 0.2,
) -> tuple[int, set[tuple[int, int]]]:
    """Erdos-Renyi base graph with the selected motifs planted on random nodes."""
    largest = max(MOTIFS[m][0] for m, on in zip(MOTIF_NAMES, plant) if on) if any(plant) else 1
    if num_nodes < largest:
        raise ValueError(f"cannot plant a {largest}-node motif in a {num_nodes}-node graph")
    p = min(1.0, mean_degree / max(1, num_nodes - 1))
    iu, ju = np.triu_indices(num_nodes, k=1)
    hit = rng.random(len(iu)) < p
    edges = set(zip(iu[hit].tolist(), ju[hit].tolist()))
    for name, on in zip(MOTIF_NAMES, plant):
        if not on:
            continue
        size, pattern = MOTIFS[name]
        nodes = rng.choice(num_nodes, size=size, replace=False).tolist()
        for a, b in pattern:
            u, v = nodes[a], nodes[b]
            edges.add((min(u, v), max(u, v)))
    return num_nodes, edges


def _featurize(rng, num_nodes: int, edges, attr_noise: float, label=None) -> Graph:
    deg = np.zeros(num_nodes)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    x = np.stack(
        [deg / 3.0 + rng.normal(scale=attr_noise, size=num_nodes), rng.normal(size=num_nodes)], axis=1
    )
    e = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    g = Graph(num_nodes, x, e, np.ones((len(e), 1)), label=label)
    return symmetrize(g)


def coarse_labels(num_nodes: int, edges, kind: str = "discrete") -> np.ndarray:
    """Cheap graph statistics standing in for coarse-grained pre-training labels."""
    deg = np.zeros(num_nodes)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    tri = count_triangles(num_nodes, edges)
    if kind == "continuous":
        # roughly centered, so label cosines spread over [-1, 1]
        # degree statistics a message-passing encoder can in principle recover
        nbr = np.zeros(num_nodes)
        for u, v in edges:
            nbr[u] += deg[v]
            nbr[v] += deg[u]
        nbr_mean = (nbr / np.maximum(deg, 1)).mean()
        return np.array(
            [deg.mean() / 3.0 - 1.05, (deg**2).mean() / 12.0 - 1.0, (deg >= 4).mean() - 0.3, nbr_mean / 3.0 - 1.3]
        )
    if kind != "discrete":
        raise ValueError(f"unknown label kind {kind!r}")
    return np.array([deg.mean() > 3.0, num_nodes > 25, deg.max() >= 6, tri > 0], dtype=np.float64)


def synth_motif_benchmark(
    seed: int = 0,
    num_pretrain: int = 2000,
    num_downstream: int = 300,
    pretrain_sizes: tuple[int, int] = PRETRAIN_SIZES,
    train_sizes: tuple[int, int] = TRAIN_SIZES,
    valid_sizes: tuple[int, int] = VALID_SIZES,
    test_sizes: tuple[int, int] = TEST_SIZES,
    valid_frac: float = 0.1,
    test_frac: float = 0.3,
    coarse: str = "discrete",
    attr_noise: float = 0.2,
) -> tuple[GraphDataset, GraphDataset]:
    """Pre-training set with coarse labels and an out-of-distribution downstream set.

    Downstream labels are the three planted-motif indicators (triangle,
    4-star, 4-clique). Downstream train, valid and test graphs come from
    disjoint node-count ranges, so test graphs are larger than anything
    fine-tuned on.
    """
    if num_pretrain < 1 or num_downstream < 1:
        raise ValueError("graph counts must be >= 1")
    n_test = math.floor(test_frac * num_downstream)
    n_valid = math.floor(valid_frac * num_downstream)
    n_train = num_downstream - n_test - n_valid
    if min(n_test, n_valid, n_train) < 1:
        raise ValueError(
            f"split of {num_downstream} downstream graphs leaves an empty split "
            f"(train={n_train}, valid={n_valid}, test={n_test})"
        )
    ranges = [pretrain_sizes, train_sizes, valid_sizes, test_sizes]
    largest = max(size for size, _ in MOTIFS.values())
    for lo, hi in ranges:
        if lo > hi or lo < largest:
            raise ValueError(f"size range [{lo}, {hi}] cannot hold a {largest}-node motif")
    ordered = sorted(ranges[1:])
    if any(a[1] >= b[0] for a, b in zip(ordered, ordered[1:])):
        raise ValueError("downstream split size ranges must be disjoint")

    root = np.random.SeedSequence(seed)
    pre_rng, down_rng = (np.random.default_rng(s) for s in root.spawn(2))

    pre_graphs = []
    for _ in range(num_pretrain):
        n = int(pre_rng.integers(pretrain_sizes[0], pretrain_sizes[1] + 1))
        plant = tuple(bool(b) for b in pre_rng.random(3) < 0.5)
        n, edges = planted_graph(pre_rng, n, plant)
        y = coarse_labels(n, edges, coarse)
        pre_graphs.append(_featurize(pre_rng, n, edges, attr_noise, label=y))
    pretrain = GraphDataset(pre_graphs, ["train"] * num_pretrain)

    down_graphs, splits = [], []
    for split, count, (lo, hi) in [
        ("train", n_train, train_sizes),
        ("valid", n_valid, valid_sizes),
        ("test", n_test, test_sizes),
    ]:
        for _ in range(count):
            n = int(down_rng.integers(lo, hi + 1))
            plant = tuple(bool(b) for b in down_rng.random(3) < 0.5)
            n, edges = planted_graph(down_rng, n, plant)
            y = np.array(plant, dtype=np.float64)
            down_graphs.append(_featurize(down_rng, n, edges, attr_noise, label=y))
            splits.append(split)
    return pretrain, GraphDataset(down_graphs, splits)
