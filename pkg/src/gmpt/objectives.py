"""Contrastive and supervised pre-training losses on adaptive representations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .graph import Graph
from .matcher import GraphMatchingModel, WorkCounters
from .tensor import Tensor

DEFAULT_TAU = 0.07


@dataclass
class ContrastiveBatch:
    """``2n`` views where views ``2i`` and ``2i + 1`` come from graph ``i``."""

    views: list[Graph]
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if len(self.views) == 0:
            raise ValueError("contrastive batch needs n >= 1 graphs")
        if len(self.views) % 2:
            raise ValueError("contrastive batch needs an even number of views")

    @property
    def n(self) -> int:
        return len(self.views) // 2

    @property
    def num_views(self) -> int:
        return len(self.views)


def partner(i: int) -> int:
    return i ^ 1


def _others(i: int, num_views: int) -> list[int]:
    return [k for k in range(num_views) if k != i]


def pair_similarity(
    view_i: Graph,
    view_j: Graph,
    model: GraphMatchingModel,
    counters: WorkCounters | None = None,
) -> Tensor:
    """Similarity of the two adaptive representations from matching the pair."""
    m = model.match_pair(view_i, view_j, counters)
    return model.similarity(m.z1, m.z2)


def anchor_loss(sims: Tensor, positive: int, tau: float) -> Tensor:
    """``-log softmax(sims / tau)[positive]`` over the anchor's ``2n - 1`` others."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    sims = T.as_tensor(sims)
    logits = T.scale(sims, 1.0 / tau)
    return T.logsumexp(logits) - logits[positive]


def _anchor_term(i: int, row: Tensor, tau: float) -> Tensor:
    j = partner(i)
    return anchor_loss(row, j if j < i else j - 1, tau)


def full_contrastive_loss(
    batch: ContrastiveBatch,
    model: GraphMatchingModel,
    counters: WorkCounters | None = None,
) -> Tensor:
    """Mean anchor loss over all ``2n`` anchors.

    Each unordered pair is matched once and its similarity reused for both
    anchors.
    """
    nv = batch.num_views
    gb = model.batch(batch.views)
    H, M = model.encode(gb)
    slices = [gb.node_slice(i) for i in range(nv)]
    cache: dict[tuple[int, int], Tensor] = {}
    for i in range(nv):
        for k in range(i + 1, nv):
            si, sk = slices[i], slices[k]
            m = model.match_encoded(H[si], M[si], H[sk], M[sk], counters)
            cache[(i, k)] = model.similarity(m.z1, m.z2)
    losses = []
    for i in range(nv):
        row = T.stack([cache[(min(i, k), max(i, k))] for k in _others(i, nv)])
        losses.append(_anchor_term(i, row, batch.tau))
    return T.mean(T.stack(losses))


def anchor_contrastive_loss(
    batch: ContrastiveBatch,
    anchor: int,
    model: GraphMatchingModel,
    counters: WorkCounters | None = None,
    encoded=None,
) -> Tensor:
    """Loss of one anchor, matching it against the other ``2n - 1`` views."""
    if encoded is None:
        gb = model.batch(batch.views)
        H, M = model.encode(gb)
    else:
        gb, H, M = encoded
    _, _, sims = model.match_anchor(gb, H, M, anchor, counters)
    return _anchor_term(anchor, sims, batch.tau)


def sample_anchors(num_views: int, q: int, seed) -> list[int]:
    """``q`` distinct anchor indices drawn uniformly without replacement."""
    if not 1 <= q <= num_views:
        raise ValueError(f"q must be in [1, {num_views}], got {q}")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(num_views, size=q, replace=False))


def approximate_contrastive_loss(
    batch: ContrastiveBatch,
    anchors: Sequence[int],
    model: GraphMatchingModel,
    counters: WorkCounters | None = None,
) -> Iterator[Tensor]:
    """Yield one anchor loss at a time.

    Each anchor re-encodes the views on a fresh tape, so a caller that runs
    backward on each yielded loss holds only one anchor's matching state.
    """
    for i in anchors:
        yield anchor_contrastive_loss(batch, i, model, counters)


def _require_complete(y: np.ndarray, mask: np.ndarray | None):
    if np.any(np.isnan(y)) or (mask is not None and not np.all(mask)):
        raise ValueError("Sup requires complete labels")


def label_similarity(y1: np.ndarray, y2: np.ndarray) -> float:
    n1, n2 = np.linalg.norm(y1), np.linalg.norm(y2)
    if n1 == 0 or n2 == 0:
        raise ValueError("degenerate cosine input: zero label vector")
    return float(y1 @ y2 / (n1 * n2))


def sup_continuous_loss(
    z1: Tensor,
    z2: Tensor,
    y1,
    y2,
    mask1=None,
    mask2=None,
) -> Tensor:
    """``(cos(y1, y2) - cos(z1, z2))^2`` for fully observed label vectors."""
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    _require_complete(y1, mask1)
    _require_complete(y2, mask2)
    target = label_similarity(y1, y2)
    return T.mse(T.cosine_similarity(z1, z2), Tensor(target))


def masked_bce(logits: Tensor, y, mask) -> Tensor:
    """Mean BCE-with-logits over observed entries."""
    y = np.nan_to_num(np.asarray(y, dtype=np.float64))
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no observed tasks")
    per = T.bce_with_logits(logits, y)
    return T.scale(T.sum_(per * Tensor(mask.astype(np.float64))), 1.0 / count)


def sup_discrete_loss(
    z1: Tensor,
    z2: Tensor,
    y1,
    y2,
    mask1,
    mask2,
    heads: Sequence[tuple[Tensor, Tensor]],
) -> Tensor:
    """Sum over the two graphs of masked-mean BCE of head ``k`` on ``z_k``.

    ``heads[k] = (W, b)`` with ``W`` shaped ``T x d`` and ``b`` length ``T``.
    """
    total = None
    for z, y, mask, (W, b) in zip((z1, z2), (y1, y2), (mask1, mask2), heads):
        logits = T.reshape(W @ T.reshape(z, (-1, 1)), (W.shape[0],)) + b
        term = masked_bce(logits, y, mask)
        total = term if total is None else total + term
    return total
