"""Desk-scale experiments: transfer against random init, the supervised
variants, and the work/time benchmark over anchor counts."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig
from .data import synth_motif_benchmark
from .evaluation import TransferReport, transfer_report
from .graph import Graph, GraphDataset
from .matcher import GraphMatchingModel, WorkCounters
from .objectives import ContrastiveBatch, sample_anchors
from .trainer import (
    EpochStats,
    FinetuneReport,
    build_model,
    contrastive_step,
    finetune,
    finetune_grid,
    pretrain_cl,
    pretrain_sup,
    sup_similarity_gap,
    with_seed,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# transfer


@dataclass
class TransferOutcome:
    baseline: list[FinetuneReport]
    pretrained: list[FinetuneReport]
    pretrain_history: list[EpochStats]
    seconds: float

    @property
    def deltas(self) -> np.ndarray:
        return np.array([p.test_auc - b.test_auc for p, b in zip(self.pretrained, self.baseline)])

    @property
    def wins(self) -> int:
        """Seeds where the pretrained model is at least as good as the baseline."""
        return int((self.deltas >= 0).sum())

    @property
    def mean_improvement(self) -> float:
        return float(self.deltas.mean())

    def task_report(self) -> TransferReport:
        """Per-task comparison of seed-averaged test AUCs."""
        return transfer_report(_task_means(self.pretrained), _task_means(self.baseline))


def _task_means(reports: Sequence[FinetuneReport]) -> list[float]:
    per = np.array([[np.nan if v is None else v for v in r.test_per_task] for r in reports])
    return [float(v) for v in np.nanmean(per, axis=0)]


def compare_finetune(
    ckpt,
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    seeds: Sequence[int],
    grid: bool = True,
) -> tuple[list[FinetuneReport], list[FinetuneReport]]:
    """Fine-tune from random init and from ``ckpt`` once per seed."""
    run = finetune_grid if grid else finetune
    baseline, pretrained = [], []
    for s in seeds:
        c = with_seed(cfg, s)
        baseline.append(run(None, dataset, c, model_cfg))
        pretrained.append(run(ckpt, dataset, c, model_cfg))
        log.info(
            "seed %d: random init %.4f, pretrained %.4f", s, baseline[-1].test_auc, pretrained[-1].test_auc
        )
    return baseline, pretrained


def transfer_experiment(
    seed: int = 0,
    seeds: Sequence[int] = tuple(range(10)),
    num_pretrain: int = 2000,
    num_downstream: int = 300,
    pretrain_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    grid: bool = True,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TransferOutcome:
    """Pre-train GMPT-CL once on the synthetic benchmark, then fine-tune from
    it and from random init for every seed in ``seeds``."""
    start = time.perf_counter()
    pretrain, downstream = synth_motif_benchmark(seed, num_pretrain, num_downstream)
    pretrain_cfg = pretrain_cfg or TrainConfig(seed=seed)
    model_cfg = model_cfg or ModelConfig()
    result = pretrain_cl(pretrain, pretrain_cfg, model_cfg, on_epoch=on_epoch)
    ft_cfg = TrainConfig(mode="finetune")
    baseline, pretrained = compare_finetune(result.checkpoint, downstream, ft_cfg, model_cfg, seeds, grid)
    return TransferOutcome(baseline, pretrained, result.history, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# supervised variants


@dataclass
class SupOutcome:
    losses: list[float]
    gap_before: float | None = None
    gap_after: float | None = None
    seconds: float = 0.0


def sup_discrete_experiment(
    seed: int = 1,
    num_graphs: int = 64,
    epochs: int = 50,
    model_cfg: ModelConfig | None = None,
) -> SupOutcome:
    """GMPT-Sup++ on a small fully labeled set; returns per-epoch mean loss."""
    start = time.perf_counter()
    pre, _ = synth_motif_benchmark(seed, num_graphs, 10, coarse="discrete")
    cfg = TrainConfig(mode="sup-discrete", epochs=epochs, batch_size=8, seed=seed)
    res = pretrain_sup(pre, cfg, model_cfg or ModelConfig(hidden=32))
    return SupOutcome([s.loss for s in res.history], seconds=time.perf_counter() - start)


def sup_continuous_experiment(
    seed: int = 1,
    num_graphs: int = 800,
    num_held_out: int = 100,
    epochs: int = 50,
    model_cfg: ModelConfig | None = None,
) -> SupOutcome:
    """GMPT-Sup on continuous labels; mean ``|s_p - s_g|`` on held-out pairs
    before and after pre-training."""
    start = time.perf_counter()
    model_cfg = model_cfg or ModelConfig(hidden=32)
    pre, _ = synth_motif_benchmark(seed, num_graphs + num_held_out, 10, coarse="continuous")
    train = GraphDataset(pre.graphs[:num_graphs], ["train"] * num_graphs)
    held = pre.graphs[num_graphs:]
    pairs = [(held[i], held[i + 1]) for i in range(0, len(held) - 1, 2)]
    model = build_model(train, model_cfg, seed)
    before = sup_similarity_gap(model, pairs)
    cfg = TrainConfig(mode="sup-continuous", epochs=epochs, batch_size=16, seed=seed)
    res = pretrain_sup(train, cfg, model_cfg, model=model)
    after = sup_similarity_gap(model, pairs)
    return SupOutcome([s.loss for s in res.history], before, after, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# benchmark


def equal_size_graphs(count: int, num_nodes: int, seed: int = 0) -> GraphDataset:
    """Synthetic graphs that all have ``num_nodes`` nodes, so every anchor
    costs the same amount of matching work."""
    pre, _ = synth_motif_benchmark(
        seed, count, 10, pretrain_sizes=(num_nodes, num_nodes)
    )
    return pre


@dataclass
class BenchRow:
    q: int
    seconds_per_epoch: float
    sim_ops: int
    peak_entries: int

    def as_dict(self) -> dict:
        return {
            "q": self.q,
            "seconds_per_epoch": self.seconds_per_epoch,
            "sim_ops": self.sim_ops,
            "peak_entries": self.peak_entries,
        }


def bench(
    q_list: Sequence[int],
    dataset: GraphDataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
) -> list[BenchRow]:
    """One epoch of approximate contrastive training per ``q`` over the same
    fixed batches (views are drawn once and shared across all ``q``)."""
    from .trainer import contrastive_views

    graphs = dataset.graphs
    batches = []
    for b, lo in enumerate(range(0, len(graphs), cfg.batch_size)):
        idx = np.arange(lo, min(lo + cfg.batch_size, len(graphs)))
        batches.append(ContrastiveBatch(contrastive_views(graphs, idx, cfg, 0), tau=cfg.tau))
    rows = []
    for q in q_list:
        if not 1 <= q <= min(b.num_views for b in batches):
            raise ValueError(f"q={q} exceeds the number of views in a batch")
        model = build_model(dataset, model_cfg, cfg.seed)
        opt = T.Adam(model.params, lr=cfg.lr)
        counters = WorkCounters()
        start = time.perf_counter()
        for b, batch in enumerate(batches):
            contrastive_step(model, opt, batch, sample_anchors(batch.num_views, q, [cfg.seed, b]), counters)
        T.active_tape().clear()
        rows.append(BenchRow(q, time.perf_counter() - start, counters.sim_ops, counters.peak_entries))
        log.info("bench q=%d: %.2fs, %d sim ops, peak %d", q, rows[-1].seconds_per_epoch, counters.sim_ops, counters.peak_entries)
    return rows
