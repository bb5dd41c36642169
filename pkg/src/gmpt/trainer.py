"""Pre-training loops, gradient accumulation and fine-tuning."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .augment import make_views
from .checkpoint import Checkpoint
from .config import ConfigError, ModelConfig, TrainConfig
from .encoder import EncoderConfig, encode_graphs, glorot, init_encoder, zeros
from .evaluation import multi_task_auc
from .graph import Graph, GraphBatch, GraphDataset
from .matcher import GraphMatchingModel, WorkCounters
from .objectives import (
    ContrastiveBatch,
    anchor_contrastive_loss,
    masked_bce,
    sample_anchors,
    sup_continuous_loss,
    sup_discrete_loss,
)
from .tensor import Adam, Tensor

log = logging.getLogger(__name__)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_model(dataset: GraphDataset, model_cfg: ModelConfig, seed: int) -> GraphMatchingModel:
    enc = model_cfg.encoder(dataset.node_dim, dataset.edge_dim)
    return GraphMatchingModel.create(enc, model_cfg.matcher(dataset.edge_dim), seed=seed)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    sim_ops: int
    peak_entries: int


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochStats] = field(default_factory=list)


# ---------------------------------------------------------------------------
# contrastive pre-training


def accumulate_anchor_gradients(
    model: GraphMatchingModel,
    batch: ContrastiveBatch,
    anchors: Sequence[int],
    counters: WorkCounters | None = None,
) -> float:
    """Back-propagate each anchor's loss on its own tape and average.

    Gradients accumulate in ``.grad`` across the per-anchor backward calls
    and are divided by ``q`` at the end. Returns the mean anchor loss.
    """
    for p in model.params.values():
        p.grad = None
    T.active_tape().clear()
    total = 0.0
    for i in anchors:
        loss = anchor_contrastive_loss(batch, i, model, counters)
        total += loss.item()
        T.backward(loss)
    q = len(anchors)
    for p in model.params.values():
        if p.grad is not None:
            p.grad /= q
    return total / q


def contrastive_step(
    model: GraphMatchingModel,
    opt: Adam,
    batch: ContrastiveBatch,
    anchors: Sequence[int],
    counters: WorkCounters | None = None,
) -> float:
    """One optimizer step of approximate contrastive training: accumulate
    the ``q`` anchor gradients, average them, then a single Adam update."""
    opt.zero_grad()
    loss = accumulate_anchor_gradients(model, batch, anchors, counters)
    opt.step()
    return loss


def contrastive_views(graphs: Sequence[Graph], indices: Sequence[int], cfg: TrainConfig, epoch: int) -> list[Graph]:
    views = []
    view_seed = _seed(cfg.seed, epoch, 1)
    for idx in indices:
        views.extend(make_views(graphs[idx], cfg.views, view_seed, int(idx)))
    return views


def pretrain_cl(
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    model: GraphMatchingModel | None = None,
    counters: WorkCounters | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Contrastive pre-training with ``q`` sampled anchors per batch of ``n`` graphs."""
    if model is None:
        model = build_model(dataset, model_cfg or ModelConfig(), cfg.seed)
    counters = counters if counters is not None else WorkCounters()
    opt = Adam(model.params, lr=cfg.lr)
    graphs = dataset.graphs
    history = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        ops_before = counters.sim_ops
        order = np.random.default_rng(_seed(cfg.seed, epoch, 0)).permutation(len(graphs))
        losses = []
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            if len(idx) == 0:
                log.warning("skipping empty batch %d in epoch %d", b, epoch)
                continue
            batch = ContrastiveBatch(contrastive_views(graphs, idx, cfg, epoch), tau=cfg.tau)
            q = min(cfg.q, batch.num_views)
            anchors = sample_anchors(batch.num_views, q, _seed(cfg.seed, epoch, 2, b))
            losses.append(contrastive_step(model, opt, batch, anchors, counters))
        stats = EpochStats(
            epoch,
            float(np.mean(losses)) if losses else float("nan"),
            time.perf_counter() - start,
            counters.sim_ops - ops_before,
            counters.peak_entries,
        )
        history.append(stats)
        log.info("cl epoch %d loss %.4f (%.1fs)", epoch, stats.loss, stats.seconds)
        if on_epoch:
            on_epoch(stats)
    ckpt = Checkpoint.from_model(model, mode="cl", epoch=cfg.epochs, seed=cfg.seed)
    return TrainResult(ckpt, history)


# ---------------------------------------------------------------------------
# supervised pre-training


def sup_pairs(num_graphs: int, seed: int, epoch: int) -> list[tuple[int, int]]:
    """Shuffle, then pair consecutive graphs; an odd one out is dropped."""
    order = np.random.default_rng(_seed(seed, epoch, 3)).permutation(num_graphs)
    return [(int(order[i]), int(order[i + 1])) for i in range(0, num_graphs - 1, 2)]


def init_sup_heads(num_tasks: int, hidden: int, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(_seed(seed, 4))
    heads = {}
    for k in (0, 1):
        heads[f"sup.head.{k}.weight"] = glorot(rng, num_tasks, hidden)
        heads[f"sup.head.{k}.bias"] = zeros(num_tasks)
    return heads


def sup_pair_loss(model: GraphMatchingModel, g1: Graph, g2: Graph, mode: str, heads=None) -> Tensor:
    m = model.match_pair(g1, g2)
    if mode == "sup-continuous":
        return sup_continuous_loss(m.z1, m.z2, g1.label, g2.label, g1.label_mask, g2.label_mask)
    pairs = [(heads[f"sup.head.{k}.weight"], heads[f"sup.head.{k}.bias"]) for k in (0, 1)]
    return sup_discrete_loss(m.z1, m.z2, g1.label, g2.label, g1.label_mask, g2.label_mask, pairs)


def check_sup_labels(dataset: GraphDataset, mode: str):
    if mode not in ("sup-continuous", "sup-discrete"):
        raise ConfigError(f"pretrain_sup needs mode sup-continuous or sup-discrete, got {mode!r}")
    for i, g in enumerate(dataset.graphs):
        if g.label is None:
            raise ValueError(f"graph {i} has no label")
        if mode == "sup-continuous" and not np.all(g.label_mask):
            raise ValueError("Sup requires complete labels")


def pretrain_sup(
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    model: GraphMatchingModel | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Supervised pre-training on random graph pairs.

    ``cfg.batch_size`` pairs are averaged per optimizer step. Discrete mode
    trains two per-position linear heads which are stored in the
    checkpoint but never used for fine-tuning.
    """
    check_sup_labels(dataset, cfg.mode)
    if model is None:
        model = build_model(dataset, model_cfg or ModelConfig(), cfg.seed)
    heads = init_sup_heads(dataset.num_tasks, model.encoder.hidden, cfg.seed) if cfg.mode == "sup-discrete" else {}
    opt = Adam({**model.params, **heads}, lr=cfg.lr)
    graphs = dataset.graphs
    history = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        pairs = sup_pairs(len(graphs), cfg.seed, epoch)
        losses = []
        for lo in range(0, len(pairs), cfg.batch_size):
            chunk = pairs[lo : lo + cfg.batch_size]
            opt.zero_grad()
            terms = [sup_pair_loss(model, graphs[a], graphs[b], cfg.mode, heads) for a, b in chunk]
            loss = T.mean(T.stack(terms))
            losses.append(loss.item())
            T.backward(loss)
            opt.step()
        stats = EpochStats(epoch, float(np.mean(losses)) if losses else float("nan"), time.perf_counter() - start, 0, 0)
        history.append(stats)
        log.info("%s epoch %d loss %.4f", cfg.mode, epoch, stats.loss)
        if on_epoch:
            on_epoch(stats)
    ckpt = Checkpoint.from_model(model, extra=heads, mode=cfg.mode, epoch=cfg.epochs, seed=cfg.seed)
    return TrainResult(ckpt, history)


def sup_similarity_gap(model: GraphMatchingModel, pairs: Sequence[tuple[Graph, Graph]]) -> float:
    """Mean ``|cos(y1, y2) - cos(z1, z2)|`` over pairs, without gradients."""
    from .objectives import label_similarity

    gaps = []
    with T.no_grad():
        for g1, g2 in pairs:
            m = model.match_pair(g1, g2)
            s_g = T.cosine_similarity(m.z1, m.z2).item()
            gaps.append(abs(label_similarity(g1.label, g2.label) - s_g))
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneReport:
    lr: float
    seed: int
    best_epoch: int
    valid_auc: float
    test_auc: float
    test_per_task: list[float | None]
    pretrained: bool
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "lr": self.lr,
            "seed": self.seed,
            "pretrained": self.pretrained,
            "best_epoch": self.best_epoch,
            "valid_auc": self.valid_auc,
            "test_auc": self.test_auc,
            "test_per_task": self.test_per_task,
        }


def _label_matrix(graphs: Sequence[Graph], num_tasks: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.stack([g.label if g.label is not None else np.full(num_tasks, np.nan) for g in graphs])
    mask = np.stack([g.label_mask if g.label_mask is not None else np.zeros(num_tasks, bool) for g in graphs])
    return y, mask


def finetune_encoder_params(
    ckpt: Checkpoint | None,
    dataset: GraphDataset,
    model_cfg: ModelConfig,
    seed: int,
) -> tuple[EncoderConfig, dict[str, Tensor]]:
    if ckpt is None:
        enc = model_cfg.encoder(dataset.node_dim, dataset.edge_dim)
        return enc, init_encoder(enc, np.random.default_rng(_seed(seed, 5)))
    enc = ckpt.encoder
    if enc.node_dim != dataset.node_dim:
        raise ValueError(f"checkpoint expects node dim {enc.node_dim}, dataset has {dataset.node_dim}")
    if enc.edge_dim != dataset.edge_dim:
        raise ValueError(f"checkpoint expects edge dim {enc.edge_dim}, dataset has {dataset.edge_dim}")
    params = {k: Tensor(v.copy(), requires_grad=True) for k, v in ckpt.encoder_params().items()}
    expected = set(init_encoder(enc, np.random.default_rng(0)))
    if set(params) != expected:
        raise ValueError(f"checkpoint encoder parameters {sorted(params)} do not match {sorted(expected)}")
    return enc, params


def predict(graphs: Sequence[Graph], enc: EncoderConfig, params: dict[str, Tensor]) -> np.ndarray:
    with T.no_grad():
        z = encode_graphs(GraphBatch(graphs, edge_dim=enc.edge_dim), params, enc)
        return (z @ params["finetune.head.weight"] + params["finetune.head.bias"]).data


def finetune(
    ckpt: Checkpoint | None,
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    lr: float | None = None,
) -> FinetuneReport:
    """Fine-tune encoder + mean readout + linear head on the train split.

    Keeps the epoch with the best validation mean AUC (early stopping with
    ``cfg.patience``) and reports test AUCs for it. Without a checkpoint
    the encoder starts from random initialization.
    """
    model_cfg = model_cfg or ModelConfig()
    lr = cfg.lr if lr is None else lr
    if dataset.num_tasks == 0:
        raise ValueError("fine-tuning needs a labeled dataset")
    enc, params = finetune_encoder_params(ckpt, dataset, model_cfg, cfg.seed)
    rng = np.random.default_rng(_seed(cfg.seed, 6))
    params["finetune.head.weight"] = glorot(rng, enc.hidden, dataset.num_tasks)
    params["finetune.head.bias"] = zeros(dataset.num_tasks)
    if cfg.freeze_encoder:
        for k, p in params.items():
            if k.startswith("encoder."):
                p.requires_grad = False
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    opt = Adam(trainable, lr=lr)

    train, valid, test = (dataset.split(s) for s in ("train", "valid", "test"))
    if not train or not valid or not test:
        raise ValueError("fine-tuning needs non-empty train, valid and test splits")
    y_train, m_train = _label_matrix(train, dataset.num_tasks)
    y_valid, m_valid = _label_matrix(valid, dataset.num_tasks)

    best = (-np.inf, -1, None)
    stale = 0
    history = []
    for epoch in range(cfg.finetune_epochs):
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            if not m_train[idx].any():
                continue
            opt.zero_grad()
            batch = GraphBatch([train[i] for i in idx], edge_dim=enc.edge_dim)
            z = encode_graphs(batch, params, enc)
            logits = z @ params["finetune.head.weight"] + params["finetune.head.bias"]
            loss = masked_bce(logits, y_train[idx], m_train[idx])
            losses.append(loss.item())
            T.backward(loss)
            opt.step()
        valid_auc = multi_task_auc(predict(valid, enc, params), y_valid, m_valid).mean
        history.append((epoch, float(np.mean(losses)) if losses else float("nan"), valid_auc))
        if valid_auc > best[0]:
            best = (valid_auc, epoch, {k: p.data.copy() for k, p in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    valid_auc, best_epoch, snapshot = best
    best_params = {k: Tensor(v) for k, v in snapshot.items()}
    y_test, m_test = _label_matrix(test, dataset.num_tasks)
    res = multi_task_auc(predict(test, enc, best_params), y_test, m_test)
    return FinetuneReport(
        lr=lr,
        seed=cfg.seed,
        best_epoch=best_epoch,
        valid_auc=float(valid_auc),
        test_auc=res.mean,
        test_per_task=res.per_task,
        pretrained=ckpt is not None,
        history=history,
    )


def finetune_grid(
    ckpt: Checkpoint | None,
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
) -> FinetuneReport:
    """Fine-tune once per learning rate in ``cfg.finetune_lrs``; keep the best on validation."""
    reports = [finetune(ckpt, dataset, cfg, model_cfg, lr=lr) for lr in cfg.finetune_lrs]
    return max(reports, key=lambda r: r.valid_auc)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    out = copy.copy(cfg)
    out.seed = seed
    return out
