"""Stochastic graph augmentations producing two correlated views.

Every augmentation is a pure function of ``(graph, ratio, seed)``; view
seeds are derived from ``(global seed, graph index, view index)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .graph import Graph, induced_subgraph

log = logging.getLogger(__name__)

KINDS = ("node-drop", "edge-perturb", "subgraph-rw", "attr-mask", "identity")


@dataclass(frozen=True)
class AugmentSpec:
    kind: str = "node-drop"
    ratio: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"augmentation ratio must be in [0, 1), got {self.ratio}")


ViewSpec = Union[AugmentSpec, Sequence[AugmentSpec]]

DEFAULT_VIEWS = (AugmentSpec("node-drop", 0.2), AugmentSpec("subgraph-rw", 0.2))


def view_seed(seed: int, graph_index: int, view_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, graph_index, view_index])


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def node_drop(g: Graph, ratio: float, seed) -> Graph:
    """Drop ``floor(ratio * n)`` uniformly chosen nodes, always keeping one."""
    n = g.num_nodes
    k = min(math.floor(ratio * n), n - 1)
    if k <= 0:
        return g
    drop = _rng(seed).choice(n, size=k, replace=False)
    keep = np.setdiff1d(np.arange(n), drop)
    return induced_subgraph(g, keep)


def _undirected_pairs(g: Graph) -> list[tuple[int, int]]:
    return sorted({(min(u, v), max(u, v)) for u, v in g.edges.tolist() if u != v})


def perturb_edges(g: Graph, ratio: float, seed) -> tuple[Graph, int, int]:
    """Swap ``floor(ratio * m)`` undirected edges for absent ones.

    Returns ``(graph, removed, added)``; ``added < removed`` only when the
    graph has too few absent pairs. New edges carry zero attributes.
    """
    pairs = _undirected_pairs(g)
    k = math.floor(ratio * len(pairs))
    if k <= 0:
        return g, 0, 0
    rng = _rng(seed)
    present = set(pairs)
    n = g.num_nodes
    absent = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in present]
    removed = {pairs[i] for i in rng.choice(len(pairs), size=k, replace=False)}
    n_add = min(k, len(absent))
    added = [absent[i] for i in sorted(rng.choice(len(absent), size=n_add, replace=False))] if n_add else []

    keep = np.array(
        [(min(u, v), max(u, v)) not in removed for u, v in g.edges.tolist()], dtype=bool
    )
    edge_dim = g.edge_attrs.shape[1] if g.edge_attrs.ndim == 2 else 0
    new_edges = [e for u, v in added for e in ((u, v), (v, u))]
    edges = np.concatenate([g.edges[keep], np.array(new_edges, dtype=np.int64).reshape(-1, 2)])
    edge_attrs = np.concatenate([g.edge_attrs[keep].reshape(-1, edge_dim), np.zeros((len(new_edges), edge_dim))])
    return g.replace(edges=edges, edge_attrs=edge_attrs), k, n_add


def edge_perturb(g: Graph, ratio: float, seed) -> Graph:
    out, removed, added = perturb_edges(g, ratio, seed)
    if added < removed:
        log.warning("edge_perturb: removed %d edges but only %d absent pairs to add", removed, added)
    return out


def subgraph_rw(g: Graph, ratio: float, seed) -> Graph:
    """Random-walk node sample of ``ceil((1 - ratio) * n)`` distinct nodes.

    The walk restarts from a uniformly chosen unvisited node on a dead end
    or after ``n`` steps without reaching a new node.
    """
    n = g.num_nodes
    target = min(n, max(1, math.ceil((1.0 - ratio) * n)))
    if target == n:
        return g
    rng = _rng(seed)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in g.edges.tolist():
        adj[u].append(v)
    cur = int(rng.integers(n))
    visited = {cur}
    stale = 0
    while len(visited) < target:
        nbrs = adj[cur]
        if not nbrs or stale >= n:
            rest = np.setdiff1d(np.arange(n), np.fromiter(visited, dtype=np.int64))
            cur = int(rest[rng.integers(len(rest))])
            visited.add(cur)
            stale = 0
            continue
        cur = nbrs[int(rng.integers(len(nbrs)))]
        if cur in visited:
            stale += 1
        else:
            visited.add(cur)
            stale = 0
    return induced_subgraph(g, visited)


def attr_mask(g: Graph, ratio: float, seed) -> Graph:
    """Zero the attribute rows of ``floor(ratio * n)`` chosen nodes."""
    n = g.num_nodes
    k = math.floor(ratio * n)
    if k <= 0:
        return g
    rows = _rng(seed).choice(n, size=k, replace=False)
    x = g.node_attrs.copy()
    x[rows] = 0.0
    return g.replace(node_attrs=x)


_AUGMENTATIONS = {
    "node-drop": node_drop,
    "edge-perturb": edge_perturb,
    "subgraph-rw": subgraph_rw,
    "attr-mask": attr_mask,
    "identity": lambda g, ratio, seed: g,
}


def augment(g: Graph, spec: AugmentSpec, seed) -> Graph:
    return _AUGMENTATIONS[spec.kind](g, spec.ratio, seed)


def make_views(g: Graph, spec: ViewSpec, seed: int, graph_index: int) -> tuple[Graph, Graph]:
    """Two independently augmented views of ``g``.

    ``spec`` is one :class:`AugmentSpec` used for both views or a pair
    giving one spec per view.
    """
    specs = (spec, spec) if isinstance(spec, AugmentSpec) else tuple(spec)
    if len(specs) != 2:
        raise ValueError("make_views needs one spec or a pair of specs")
    return (
        augment(g, specs[0], view_seed(seed, graph_index, 0)),
        augment(g, specs[1], view_seed(seed, graph_index, 1)),
    )
