"""ROC-AUC with missing labels, multi-task aggregation and transfer analysis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half (Mann-Whitney U divided by ``P * N``).
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: labels contain a single class")
    ranks = rankdata(scores)  # average ranks give ties half credit
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MultiTaskAUC:
    per_task: list[float | None]
    mean: float

    @property
    def defined(self) -> list[int]:
        return [t for t, v in enumerate(self.per_task) if v is not None]


def multi_task_auc(scores, labels, mask=None) -> MultiTaskAUC:
    """Per-task AUC over observed entries; single-class tasks are ``None``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if mask is None:
        mask = ~np.isnan(labels)
    mask = np.asarray(mask, dtype=bool).reshape(labels.shape)
    if scores.shape != labels.shape:
        raise ValueError(f"score matrix {scores.shape} does not match labels {labels.shape}")
    per_task: list[float | None] = []
    for t in range(labels.shape[1]):
        obs = mask[:, t]
        y = labels[obs, t]
        if y.size == 0 or np.all(y > 0.5) or np.all(y <= 0.5):
            per_task.append(None)
        else:
            per_task.append(roc_auc(scores[obs, t], y))
    values = [v for v in per_task if v is not None]
    if not values:
        raise ValueError("no task has both classes observed")
    return MultiTaskAUC(per_task, float(np.mean(values)))


@dataclass
class TransferReport:
    tasks: list[int]
    pretrained: list[float]
    baseline: list[float]
    deltas: list[float]
    positive: int
    negative: int
    worst_negative: float
    all_above_half: bool

    def as_rows(self) -> list[dict]:
        return [
            {"task": t, "pretrained": p, "baseline": b, "delta": d}
            for t, p, b, d in zip(self.tasks, self.pretrained, self.baseline, self.deltas)
        ]


def transfer_report(pretrained, baseline, tasks=None) -> TransferReport:
    """Per-task transfer deltas; ties count as non-negative transfer.

    ``worst_negative`` is the most negative delta, or 0 when none is negative.
    """
    pretrained = [float(v) for v in pretrained]
    baseline = [float(v) for v in baseline]
    if len(pretrained) != len(baseline):
        raise ValueError(f"task lists differ: {len(pretrained)} vs {len(baseline)} tasks")
    if tasks is None:
        tasks = list(range(len(pretrained)))
    deltas = [p - b for p, b in zip(pretrained, baseline)]
    negative = sum(d < 0 for d in deltas)
    return TransferReport(
        tasks=list(tasks),
        pretrained=pretrained,
        baseline=baseline,
        deltas=deltas,
        positive=len(deltas) - negative,
        negative=negative,
        worst_negative=min([0.0] + deltas),
        all_above_half=all(p > 0.5 for p in pretrained),
    )
