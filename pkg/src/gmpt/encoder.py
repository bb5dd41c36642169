"""Edge-aware GIN / mean-aggregation GNN encoder and mean readout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .graph import Graph, GraphBatch
from .tensor import Tensor

ARCHS = ("gin", "gcn-mean")

Params = dict[str, Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    node_dim: int
    edge_dim: int
    num_layers: int = 3
    hidden: int = 64
    arch: str = "gin"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown encoder arch {self.arch!r}; expected one of {ARCHS}")
        if self.num_layers < 1 or self.hidden < 1:
            raise ValueError("num_layers and hidden must be >= 1")
        if self.node_dim < 1 or self.edge_dim < 0:
            raise ValueError("node_dim must be >= 1 and edge_dim >= 0")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> Params:
    d = config.hidden
    params = {
        "encoder.input.weight": glorot(rng, config.node_dim, d),
        "encoder.input.bias": zeros(d),
    }
    for k in range(config.num_layers):
        pre = f"encoder.layers.{k}"
        if config.edge_dim:
            params[f"{pre}.edge.weight"] = glorot(rng, config.edge_dim, d)
        params[f"{pre}.mlp.0.weight"] = glorot(rng, d, d)
        params[f"{pre}.mlp.0.bias"] = zeros(d)
        params[f"{pre}.mlp.1.weight"] = glorot(rng, d, d)
        params[f"{pre}.mlp.1.bias"] = zeros(d)
    return params


def mlp2(x: Tensor, params: Params, prefix: str) -> Tensor:
    """Two linear layers with a relu in between."""
    h = T.relu(x @ params[f"{prefix}.0.weight"] + params[f"{prefix}.0.bias"])
    return h @ params[f"{prefix}.1.weight"] + params[f"{prefix}.1.bias"]


def neighbor_sum(batch: GraphBatch, h: Tensor, edge_weight: Tensor | None) -> Tensor:
    """Sum over incoming edges of ``h[src] + edge_weight . e``."""
    out = T.spmm(batch.adjacency, h)
    if edge_weight is not None:
        out = out + T.Tensor(batch.edge_sum) @ edge_weight
    return out


def aggregate(batch: GraphBatch, h: Tensor, edge_weight: Tensor | None, arch: str) -> Tensor:
    agg = neighbor_sum(batch, h, edge_weight)
    if arch == "gcn-mean":
        inv = np.divide(1.0, batch.in_degree, out=np.zeros_like(batch.in_degree), where=batch.in_degree > 0)
        agg = T.spmm(sp.diags(inv).tocsr(), agg)
    return agg


def as_batch(g: Graph | GraphBatch, edge_dim: int | None = None) -> GraphBatch:
    return g if isinstance(g, GraphBatch) else GraphBatch([g], edge_dim=edge_dim)


def encode_nodes(g: Graph | GraphBatch, params: Params, config: EncoderConfig) -> Tensor:
    """Node representations ``H`` (num_nodes x hidden) after ``num_layers`` rounds.

    Each round computes ``h_v <- MLP_k(h_v + agg_{u in N(v)}(h_u + E_k e_uv))``
    where ``agg`` is a sum (gin) or a degree-normalized mean (gcn-mean).
    A relu separates rounds; the last round is linear.
    """
    batch = as_batch(g, config.edge_dim)
    if batch.node_attrs.shape[1] != config.node_dim:
        raise T.ShapeError(
            f"node attrs have width {batch.node_attrs.shape[1]}, encoder expects {config.node_dim}"
        )
    if config.edge_dim and batch.edge_sum.shape[1] != config.edge_dim:
        raise T.ShapeError(
            f"edge attrs have width {batch.edge_sum.shape[1]}, encoder expects {config.edge_dim}"
        )
    h = Tensor(batch.node_attrs) @ params["encoder.input.weight"] + params["encoder.input.bias"]
    for k in range(config.num_layers):
        pre = f"encoder.layers.{k}"
        agg = aggregate(batch, h, params.get(f"{pre}.edge.weight"), config.arch)
        h = mlp2(h + agg, params, f"{pre}.mlp")
        if k < config.num_layers - 1:
            h = T.relu(h)
    return h


def readout_mean(H: Tensor) -> Tensor:
    if H.shape[0] == 0:
        raise ValueError("readout of an empty node set")
    return T.mean(H, axis=0)


def readout_mean_batch(H: Tensor, batch: GraphBatch) -> Tensor:
    """Per-graph mean of node rows, ``num_graphs x hidden``."""
    return T.spmm(batch.mean_pool, H)


def encode_graphs(graphs, params: Params, config: EncoderConfig) -> Tensor:
    """Static graph representations for a list of graphs."""
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch(graphs, edge_dim=config.edge_dim)
    return readout_mean_batch(encode_nodes(batch, params, config), batch)
