"""Neural graph matching head producing adaptive graph representations.

After the encoder, one matching round combines, for every node ``t``:

* intra-graph messages ``sum_{s in N(t)} (h_s + E e_st)``,
* inter-graph messages ``sum_{s'} a_{s'->t} h_{s'}`` with ``a`` a softmax
  over targets of ``sim(h_{s'}, h_t)`` for each source ``s'``,

and updates ``z_t = MLP([h_t ; intra_t ; inter_t])``. The graph's adaptive
representation is the mean of its ``z`` rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .encoder import EncoderConfig, Params, encode_nodes, glorot, init_encoder, mlp2, neighbor_sum, zeros
from .graph import Graph, GraphBatch
from .tensor import Tensor

SIMILARITIES = ("dot", "cosine")


@dataclass(frozen=True)
class MatcherConfig:
    hidden: int
    edge_dim: int
    similarity: str = "dot"
    normalize_target: bool = False

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.similarity!r}; expected one of {SIMILARITIES}")


def init_matcher(config: MatcherConfig, rng: np.random.Generator) -> Params:
    d = config.hidden
    params = {}
    if config.edge_dim:
        params["matcher.edge.weight"] = glorot(rng, config.edge_dim, d)
    params["matcher.update.0.weight"] = glorot(rng, 3 * d, d)
    params["matcher.update.0.bias"] = zeros(d)
    params["matcher.update.1.weight"] = glorot(rng, d, d)
    params["matcher.update.1.bias"] = zeros(d)
    return params


@dataclass
class WorkCounters:
    """Node-pair similarity work and live similarity storage.

    ``sim_ops`` counts every node-pair similarity evaluated (each matching
    direction separately). ``live_entries`` counts similarity entries held
    by the active tape; ``peak_entries`` is its running maximum.
    """

    sim_ops: int = 0
    pair_comparisons: int = 0
    live_entries: int = 0
    peak_entries: int = 0

    def hold(self, entries: int):
        self.live_entries += entries
        self.peak_entries = max(self.peak_entries, self.live_entries)

    def release(self, entries: int):
        self.live_entries -= entries

    def as_dict(self) -> dict[str, int]:
        return {
            "sim_ops": self.sim_ops,
            "pair_comparisons": self.pair_comparisons,
            "peak_entries": self.peak_entries,
        }


def _charge(counters: WorkCounters | None, n_src: int, n_tgt: int):
    if counters is None:
        return
    n = n_src * n_tgt
    counters.sim_ops += n
    counters.hold(n)
    if T.is_recording():
        T.active_tape().on_release(lambda: counters.release(n))
    else:
        counters.release(n)


def similarity_matrix(H_src: Tensor, H_tgt: Tensor, sim: str = "dot") -> Tensor:
    if H_src.shape[1] != H_tgt.shape[1]:
        raise T.ShapeError(f"similarity: widths differ {H_src.shape} vs {H_tgt.shape}")
    if sim == "cosine":
        H_src, H_tgt = T.normalize_rows(H_src), T.normalize_rows(H_tgt)
    elif sim != "dot":
        raise ValueError(f"unknown similarity {sim!r}")
    return H_src @ H_tgt.T


def inter_attention(
    H_src: Tensor,
    H_tgt: Tensor,
    sim: str = "dot",
    counters: WorkCounters | None = None,
    normalize_target: bool = False,
) -> Tensor:
    """Attention ``A[s, t]``: softmax over targets ``t`` for each source ``s``.

    With ``normalize_target`` the columns are additionally rescaled to sum
    to one (rows are then no longer stochastic).
    """
    if H_src.shape[0] == 0 or H_tgt.shape[0] == 0:
        raise ValueError("inter_attention needs non-empty node sets")
    _charge(counters, H_src.shape[0], H_tgt.shape[0])
    A = T.softmax(similarity_matrix(H_src, H_tgt, sim))
    if normalize_target:
        A = A / T.sum_(A, axis=0)
    return A


def inter_messages(H_src: Tensor, A: Tensor) -> Tensor:
    """Incoming cross-graph message per target: ``sum_s A[s, t] H_src[s]``."""
    if A.shape[0] != H_src.shape[0]:
        raise T.ShapeError(f"inter_messages: attention {A.shape} vs sources {H_src.shape}")
    return A.T @ H_src


def intra_messages(g: Graph | GraphBatch, H: Tensor, params: Params) -> Tensor:
    batch = g if isinstance(g, GraphBatch) else GraphBatch([g])
    return neighbor_sum(batch, H, params.get("matcher.edge.weight"))


def update_nodes(H: Tensor, M_intra: Tensor, M_inter: Tensor, params: Params) -> Tensor:
    if not H.shape == M_intra.shape == M_inter.shape:
        raise T.ShapeError(f"update_nodes: shapes {H.shape}, {M_intra.shape}, {M_inter.shape}")
    return mlp2(T.concat([H, M_intra, M_inter], axis=1), params, "matcher.update")


@dataclass
class MatchedPair:
    Z1: Tensor
    Z2: Tensor
    z1: Tensor
    z2: Tensor
    A12: Tensor
    A21: Tensor
    sim_op_count: int


@dataclass
class GraphMatchingModel:
    """Encoder plus matching head sharing one named parameter map."""

    encoder: EncoderConfig
    matcher: MatcherConfig
    params: Params = field(default_factory=dict)

    @classmethod
    def create(cls, encoder: EncoderConfig, matcher: MatcherConfig | None = None, seed: int = 0):
        if matcher is None:
            matcher = MatcherConfig(hidden=encoder.hidden, edge_dim=encoder.edge_dim)
        if matcher.hidden != encoder.hidden:
            raise ValueError("matcher and encoder widths differ")
        rng = np.random.default_rng(seed)
        params = init_encoder(encoder, rng)
        params.update(init_matcher(matcher, rng))
        return cls(encoder, matcher, params)

    @property
    def encoder_params(self) -> Params:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}

    def batch(self, graphs) -> GraphBatch:
        return GraphBatch(graphs, edge_dim=self.encoder.edge_dim)

    def encode(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        """Node representations and intra-graph messages for a batch."""
        H = encode_nodes(batch, self.params, self.encoder)
        return H, intra_messages(batch, H, self.params)

    def similarity(self, a: Tensor, b: Tensor) -> Tensor:
        if self.matcher.similarity == "cosine":
            return T.cosine_similarity(a, b)
        return T.dot(a, b)

    def match_encoded(self, H1, M1, H2, M2, counters: WorkCounters | None = None) -> MatchedPair:
        sim, norm_t = self.matcher.similarity, self.matcher.normalize_target
        before = counters.sim_ops if counters else 0
        A12 = inter_attention(H1, H2, sim, counters, norm_t)
        A21 = inter_attention(H2, H1, sim, counters, norm_t)
        Z1 = update_nodes(H1, M1, inter_messages(H2, A21), self.params)
        Z2 = update_nodes(H2, M2, inter_messages(H1, A12), self.params)
        if counters is not None:
            counters.pair_comparisons += 1
        ops = (counters.sim_ops - before) if counters else 2 * H1.shape[0] * H2.shape[0]
        return MatchedPair(Z1, Z2, T.mean(Z1, axis=0), T.mean(Z2, axis=0), A12, A21, ops)

    def match_pair(self, g1: Graph, g2: Graph, counters: WorkCounters | None = None) -> MatchedPair:
        batch = self.batch([g1, g2])
        H, M = self.encode(batch)
        s1, s2 = batch.node_slice(0), batch.node_slice(1)
        return self.match_encoded(H[s1], M[s1], H[s2], M[s2], counters)

    def match_anchor(
        self,
        batch: GraphBatch,
        H: Tensor,
        M: Tensor,
        anchor: int,
        counters: WorkCounters | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Match graph ``anchor`` of ``batch`` against every other graph at once.

        Returns ``(z_anchor, z_others, sims)`` where row ``j`` of the first
        two is the pair with the ``j``-th other graph (batch order, anchor
        skipped) and ``sims[j]`` their similarity. Values equal those of
        separate :meth:`match_encoded` calls.
        """
        sim, norm_t = self.matcher.similarity, self.matcher.normalize_target
        seg = batch.node_slice(anchor)
        n_a = seg.stop - seg.start
        others = np.array([k for k in range(batch.num_graphs) if k != anchor], dtype=np.int64)
        if others.size == 0:
            raise ValueError("match_anchor needs at least two graphs")
        sizes = batch.sizes[others]
        rows = np.concatenate([np.arange(batch.offsets[k], batch.offsets[k + 1]) for k in others])
        n_o, n_k, d = len(rows), len(others), H.shape[1]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        seg_id = np.repeat(np.arange(n_k), sizes)
        group = sp.csr_matrix((np.ones(n_o), (seg_id, np.arange(n_o))), shape=(n_k, n_o))

        Ha, Ma = H[seg], M[seg]
        Ho, Mo = T.take_rows(H, rows), T.take_rows(M, rows)

        # anchor -> others: softmax over each other graph's nodes separately
        _charge(counters, n_a, n_o)
        A_fwd = T.segment_softmax(similarity_matrix(Ha, Ho, sim), starts)
        if norm_t:
            A_fwd = A_fwd / T.sum_(A_fwd, axis=0)
        inter_o = A_fwd.T @ Ha

        # others -> anchor: ordinary row softmax over the anchor's nodes
        _charge(counters, n_o, n_a)
        A_bwd = T.softmax(similarity_matrix(Ho, Ha, sim))
        if norm_t:
            A_bwd = A_bwd / T.spmm(group.T.tocsr(), T.spmm(group, A_bwd))
        weighted = T.reshape(A_bwd, (n_o, n_a, 1)) * T.reshape(Ho, (n_o, 1, d))
        inter_a = T.reshape(T.spmm(group, T.reshape(weighted, (n_o, n_a * d))), (n_k * n_a, d))

        tile = np.tile(np.arange(n_a), n_k)
        Za = update_nodes(T.take_rows(Ha, tile), T.take_rows(Ma, tile), inter_a, self.params)
        pool_a = sp.csr_matrix(
            (np.full(n_k * n_a, 1.0 / n_a), (np.repeat(np.arange(n_k), n_a), np.arange(n_k * n_a))),
            shape=(n_k, n_k * n_a),
        )
        za = T.spmm(pool_a, Za)
        Zo = update_nodes(Ho, Mo, inter_o, self.params)
        pool_o = sp.csr_matrix((1.0 / sizes[seg_id], (seg_id, np.arange(n_o))), shape=(n_k, n_o))
        zo = T.spmm(pool_o, Zo)
        if counters is not None:
            counters.pair_comparisons += n_k
        return za, zo, self.similarity(za, zo)


def match_pair(g1: Graph, g2: Graph, model: GraphMatchingModel, counters: WorkCounters | None = None) -> MatchedPair:
    return model.match_pair(g1, g2, counters)
