"""Executable property suite: gradients, attention, loss values, the
approximation identity, work counters, invariances and the AUC oracle.

Each check returns a :class:`CheckResult`; ``gmpt gradcheck`` runs them all
and exits nonzero when any fails.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .encoder import EncoderConfig, encode_graphs
from .evaluation import roc_auc
from .graph import Graph, GraphDataset, permute_nodes, undirected_graph
from .matcher import GraphMatchingModel, MatcherConfig, WorkCounters
from .objectives import (
    ContrastiveBatch,
    anchor_loss,
    full_contrastive_loss,
    masked_bce,
    sample_anchors,
    sup_continuous_loss,
    sup_discrete_loss,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

GRAD_TOL = 1e-4
GRAD_EPS = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def random_graph(
    rng: np.random.Generator,
    min_nodes: int = 1,
    max_nodes: int = 5,
    node_dim: int = 3,
    edge_dim: int = 2,
    p: float = 0.5,
    scale: float = 1.0,
) -> Graph:
    n = int(rng.integers(min_nodes, max_nodes + 1))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    attrs = rng.normal(scale=scale, size=(len(edges), edge_dim)) if edges else None
    return undirected_graph(rng.normal(scale=scale, size=(n, node_dim)), edges, attrs, edge_dim=edge_dim)


def random_model(rng: np.random.Generator, hidden: int = 4, layers: int = 2, sim: str = "dot", bias_scale=0.5):
    """Small model with random (not zero) biases, so relu inputs sit away from 0."""
    model = GraphMatchingModel.create(
        EncoderConfig(3, 2, layers, hidden), MatcherConfig(hidden, 2, sim), seed=int(rng.integers(2**31))
    )
    for k, p in model.params.items():
        if k.endswith("bias"):
            p.data[:] = rng.normal(scale=bias_scale, size=p.shape)
    return model


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, passed, detail, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# gradients


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return T.sum_(out * Tensor(w))


def _primitive(name, shapes, op, positive=()):
    """Instance builder: random inputs, loss ``sum(op(*inputs) * W)``."""

    def build(rng):
        xs = {}
        for i, shape in enumerate(shapes):
            v = rng.normal(size=shape)
            if i in positive:
                v = 0.5 + np.abs(v)
            xs[f"x{i}"] = Tensor(v, requires_grad=True)
        args = [xs[f"x{i}"] for i in range(len(shapes))]
        with T.no_grad():
            w = rng.normal(size=np.shape(op(*args).data))
        return (lambda: _weighted(op(*args), w)), xs

    return name, build


_SEG = np.array([0, 2, 3])
_SPARSE = sp.csr_matrix(np.array([[1.0, 0, 2, 0], [0, 0, -1, 3], [0.5, 0, 0, 0]]))
_ROWS = np.array([2, 0, 2, 1])
_TARGETS = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])

PRIMITIVES = [
    _primitive("add", [(3, 4), (4,)], T.add),
    _primitive("sub", [(3, 4), (3, 1)], T.sub),
    _primitive("mul", [(3, 4), (1, 4)], T.mul),
    _primitive("div", [(3, 4), (3, 4)], T.div, positive=(1,)),
    _primitive("scale", [(3, 4)], lambda a: T.scale(a, -1.7)),
    _primitive("relu", [(3, 4)], T.relu),
    _primitive("exp", [(3, 4)], T.exp),
    _primitive("log", [(3, 4)], T.log, positive=(0,)),
    _primitive("sqrt", [(3, 4)], T.sqrt, positive=(0,)),
    _primitive("sum", [(3, 4)], lambda a: T.sum_(a, axis=0)),
    _primitive("mean", [(3, 4)], lambda a: T.mean(a, axis=1)),
    _primitive("reshape", [(3, 4)], lambda a: T.reshape(a, (2, 6))),
    _primitive("transpose", [(3, 4)], T.transpose),
    _primitive("index", [(3, 4)], lambda a: T.index(a, (_ROWS, slice(None)))),
    _primitive("take_rows", [(3, 4)], lambda a: T.take_rows(a, _ROWS)),
    _primitive("concat", [(3, 2), (3, 3)], lambda a, b: T.concat([a, b], axis=1)),
    _primitive("stack", [(3,), (3,)], lambda a, b: T.stack([a, b])),
    _primitive("matmul", [(3, 4), (4, 2)], T.matmul),
    _primitive("spmm", [(4, 2)], lambda a: T.spmm(_SPARSE, a)),
    _primitive("dot", [(3, 4), (3, 4)], T.dot),
    _primitive("norm", [(3, 4)], T.norm),
    _primitive("normalize_rows", [(3, 4)], T.normalize_rows),
    _primitive("cosine_similarity", [(4,), (4,)], T.cosine_similarity),
    _primitive("softmax", [(3, 4)], T.softmax),
    _primitive("segment_softmax", [(2, 5)], lambda a: T.segment_softmax(a, _SEG)),
    _primitive("logsumexp", [(3, 4)], T.logsumexp),
    _primitive("bce_with_logits", [(2, 3)], lambda a: T.bce_with_logits(a, _TARGETS)),
    _primitive("mse", [(3, 4), (3, 4)], T.mse),
]


def _contrastive_instance(rng, num_views=4, tau=2.0, sim="dot"):
    model = random_model(rng, sim=sim)
    views = [random_graph(rng, scale=0.5) for _ in range(num_views)]
    batch = ContrastiveBatch(views, tau=tau)
    return (lambda: full_contrastive_loss(batch, model)), model.params


def _sup_instance(rng, mode):
    model = random_model(rng)
    g1, g2 = random_graph(rng, scale=0.5), random_graph(rng, scale=0.5)
    y1, y2 = rng.random(3) + 0.1, rng.random(3) + 0.1
    if mode == "continuous":
        def f():
            m = model.match_pair(g1, g2)
            return sup_continuous_loss(m.z1, m.z2, y1, y2)
        return f, model.params
    y1, y2 = (y1 > 0.6).astype(float), (y2 > 0.6).astype(float)
    mask = np.array([True, False, True])
    heads = [(Tensor(rng.normal(size=(3, 4)), True), Tensor(rng.normal(size=3), True)) for _ in range(2)]
    params = dict(model.params)
    for k, (W, b) in enumerate(heads):
        params[f"head.{k}.weight"], params[f"head.{k}.bias"] = W, b

    def f():
        m = model.match_pair(g1, g2)
        return sup_discrete_loss(m.z1, m.z2, y1, y2, mask, np.ones(3, bool), heads)

    return f, params


def _finetune_instance(rng):
    model = random_model(rng)
    graphs = [random_graph(rng, scale=0.5) for _ in range(3)]
    params = dict(model.encoder_params)
    params["head.weight"] = Tensor(rng.normal(size=(4, 2)), True)
    params["head.bias"] = Tensor(rng.normal(size=2), True)
    y = rng.integers(0, 2, size=(3, 2)).astype(float)
    mask = np.array([[True, True], [False, True], [True, False]])

    def f():
        z = encode_graphs(graphs, params, model.encoder)
        return masked_bce(z @ params["head.weight"] + params["head.bias"], y, mask)

    return f, params


# The gate covers every primitive plus the contrastive pipeline; the other
# pipelines are slower and run under ``extended=True``.
PIPELINES = [
    ("pipeline: encode-match-contrastive (dot)", lambda rng: _contrastive_instance(rng)),
]
EXTENDED_PIPELINES = [
    ("pipeline: encode-match-contrastive (cosine)", lambda rng: _contrastive_instance(rng, sim="cosine")),
    ("pipeline: encode-match-sup-continuous", lambda rng: _sup_instance(rng, "continuous")),
    ("pipeline: encode-match-sup-discrete", lambda rng: _sup_instance(rng, "discrete")),
    ("pipeline: encode-readout-finetune", _finetune_instance),
]


@dataclass
class GradCaseResult:
    name: str
    max_rel_error: float
    instances: int
    redraws: int


def grad_case(name, build, instances=10, seed=0, eps=GRAD_EPS, max_draws=200) -> GradCaseResult:
    """Check ``instances`` random instances of one case.

    Central differences are only meaningful where the function is smooth
    over the stencil; an instance whose stencil crosses a relu kink is
    discarded and redrawn. The number of redraws is reported.
    """
    worst, done, redraws = 0.0, 0, 0
    for draw in range(max_draws):
        rng = np.random.default_rng([seed, draw])
        f, params = build(rng)
        rep = T.grad_check_report(f, params, eps)
        if rep.kink_crossings:
            redraws += 1
            continue
        worst = max(worst, rep.max_rel_error)
        done += 1
        if done == instances:
            break
    if done < instances:
        worst = math.inf
    return GradCaseResult(name, worst, done, redraws)


def check_gradients(instances: int = 10, seed: int = 0, extended: bool = False) -> CheckResult:
    cases = PRIMITIVES + PIPELINES + (EXTENDED_PIPELINES if extended else [])

    def run():
        results = [grad_case(n, b, instances, seed) for n, b in cases]
        bad = [r for r in results if not r.max_rel_error < GRAD_TOL]
        for r in results:
            log.debug("gradcheck %s: %.2e over %d (%d redrawn)", r.name, r.max_rel_error, r.instances, r.redraws)
        worst = max(results, key=lambda r: r.max_rel_error)
        redrawn = sum(r.redraws for r in results)
        detail = (
            f"{len(results)} cases x {instances} instances, worst {worst.max_rel_error:.2e} "
            f"({worst.name}), {redrawn} kink-crossing instances redrawn"
        )
        if bad:
            detail += "; failing: " + ", ".join(r.name for r in bad)
        return not bad, detail

    return _timed("autodiff gradients", run)


# ---------------------------------------------------------------------------
# matching


def check_attention_rows(pairs: int = 100, seed: int = 1) -> CheckResult:
    def run():
        worst = 0.0
        for i in range(pairs):
            rng = np.random.default_rng([seed, i])
            model = random_model(rng, hidden=8)
            g1, g2 = random_graph(rng, max_nodes=8), random_graph(rng, max_nodes=8)
            with T.no_grad():
                m = model.match_pair(g1, g2)
            for A in (m.A12.data, m.A21.data):
                worst = max(worst, float(np.abs(A.sum(axis=1) - 1.0).max()))
        return worst <= 1e-6, f"max |row sum - 1| = {worst:.1e} over {pairs} pairs"

    return _timed("attention stochasticity", run)


def check_symmetry(cases: int = 50, seed: int = 2) -> CheckResult:
    def run():
        perm_err = swap_err = 0.0
        adaptive = 0
        for i in range(cases):
            rng = np.random.default_rng([seed, i])
            model = random_model(rng, hidden=8)
            a, b, c = (random_graph(rng, min_nodes=2, max_nodes=7) for _ in range(3))
            pa = permute_nodes(a, rng.permutation(a.num_nodes), rng.permutation(a.num_edges))
            pb = permute_nodes(b, rng.permutation(b.num_nodes), rng.permutation(b.num_edges))
            with T.no_grad():
                ab = model.match_pair(a, b)
                pab = model.match_pair(pa, pb)
                ba = model.match_pair(b, a)
                ac = model.match_pair(a, c)
            perm_err = max(perm_err, _gap(ab.z1, pab.z1), _gap(ab.z2, pab.z2))
            swap_err = max(swap_err, _gap(ab.z1, ba.z2), _gap(ab.z2, ba.z1))
            adaptive += float(np.linalg.norm(ab.z1.data - ac.z1.data)) > 1e-6
        ok = perm_err <= 1e-9 and swap_err <= 1e-9 and adaptive >= cases - 1
        return ok, (
            f"permutation {perm_err:.1e}, swap {swap_err:.1e}, "
            f"adaptive in {adaptive}/{cases} triples"
        )

    return _timed("matching symmetry and adaptivity", run)


def _gap(a: Tensor, b: Tensor) -> float:
    return float(np.abs(a.data - b.data).max())


# ---------------------------------------------------------------------------
# contrastive objective


def check_contrastive_values() -> CheckResult:
    """Equal similarities give anchor loss log(2n - 1), directly and through
    a model fed identical views."""

    def run():
        worst = 0.0
        rng = np.random.default_rng(3)
        model = random_model(rng, hidden=8)
        g = random_graph(rng, min_nodes=3, max_nodes=5)
        for nv in (4, 6, 8):
            expect = math.log(nv - 1)
            with T.no_grad():
                direct = anchor_loss(Tensor(np.full(nv - 1, 0.37)), 0, 0.07).item()
                batch = ContrastiveBatch([g] * nv, tau=0.07)
                via_model = full_contrastive_loss(batch, model).item()
            worst = max(worst, abs(direct - expect), abs(via_model - expect))
        return worst <= 1e-6, f"max |loss - log(2n-1)| = {worst:.1e} for 2n in (4, 6, 8)"

    return _timed("closed-form contrastive values", run)


def _flat_grad(model: GraphMatchingModel) -> np.ndarray:
    return np.concatenate(
        [(p.grad if p.grad is not None else np.zeros(p.shape)).ravel() for _, p in sorted(model.params.items())]
    )


def _approx_fixture(seed: int):
    rng = np.random.default_rng(seed)
    model = random_model(rng, hidden=8)
    views = [random_graph(rng, min_nodes=3, max_nodes=6, scale=0.5) for _ in range(8)]
    return model, ContrastiveBatch(views, tau=0.5)


def full_gradient(model: GraphMatchingModel, batch: ContrastiveBatch) -> np.ndarray:
    for p in model.params.values():
        p.grad = None
    T.backward(full_contrastive_loss(batch, model))
    return _flat_grad(model)


def accumulated_gradient(model: GraphMatchingModel, batch: ContrastiveBatch, anchors) -> np.ndarray:
    from .trainer import accumulate_anchor_gradients

    accumulate_anchor_gradients(model, batch, anchors)
    return _flat_grad(model)


def check_approximation(draws: int = 200, seed: int = 4) -> CheckResult:
    """q = 2n reproduces the full gradient; q = 1 matches it in expectation."""

    def run():
        model, batch = _approx_fixture(seed)
        full = full_gradient(model, batch)
        exact = accumulated_gradient(model, batch, range(batch.num_views))
        err = float(np.abs(exact - full).max())
        per_anchor = {}
        total = np.zeros_like(full)
        for k in range(draws):
            (a,) = sample_anchors(batch.num_views, 1, [seed, k])
            if a not in per_anchor:
                per_anchor[a] = accumulated_gradient(model, batch, [a])
            total += per_anchor[a]
        mc = total / draws
        cos = float(mc @ full / (np.linalg.norm(mc) * np.linalg.norm(full)))
        ok = err <= 1e-9 and cos >= 0.99
        return ok, f"q=2n max |diff| {err:.1e}; {draws} q=1 draws cosine {cos:.4f}"

    return _timed("approximation exactness", run)


# ---------------------------------------------------------------------------
# work counters


def equal_size_batch(n: int, num_nodes: int, seed: int = 5, edge_dim: int = 2) -> list[Graph]:
    """``2n`` views of equal size, so every anchor costs the same."""
    rng = np.random.default_rng(seed)
    return [
        random_graph(rng, num_nodes, num_nodes, node_dim=3, edge_dim=edge_dim, p=0.4) for _ in range(2 * n)
    ]


def anchor_work(model: GraphMatchingModel, views: list[Graph], q: int, seed: int = 0, tau: float = 0.07):
    """Counters after one accumulated step with ``q`` anchors."""
    from .trainer import accumulate_anchor_gradients

    counters = WorkCounters()
    batch = ContrastiveBatch(views, tau=tau)
    anchors = sample_anchors(batch.num_views, q, seed)
    accumulate_anchor_gradients(model, batch, anchors, counters)
    T.active_tape().clear()
    return counters


def check_work_scaling(q_list=(1, 2, 4, 8), seed: int = 5) -> CheckResult:
    def run():
        views = equal_size_batch(4, 6, seed)
        model = random_model(np.random.default_rng(seed), hidden=8)
        full = anchor_work(model, views, len(views))
        rows, ratio_ok, peaks = [], True, set()
        for q in q_list:
            c = anchor_work(model, views, q, seed=q)
            ratio_ok &= c.sim_ops * len(views) == full.sim_ops * q
            peaks.add(c.peak_entries)
            rows.append(f"q={q}: {c.sim_ops} ops, peak {c.peak_entries}")
        peaks.add(full.peak_entries)
        ok = ratio_ok and len(peaks) == 1
        return ok, f"2n={len(views)} full {full.sim_ops} ops; " + "; ".join(rows)

    return _timed("work scaling", run)


# ---------------------------------------------------------------------------
# evaluation


def brute_force_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def check_auc_oracle(instances: int = 100, seed: int = 6) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(instances):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            scores = rng.normal(size=n)
            if i % 2:
                scores = np.round(scores, 1)
            worst = max(worst, abs(roc_auc(scores, labels) - brute_force_auc(scores, labels)))
        return worst <= 1e-12, f"max |auc - brute force| = {worst:.1e} over {instances} instances"

    return _timed("roc-auc oracle", run)


# ---------------------------------------------------------------------------
# determinism


def tiny_dataset(seed: int = 7, count: int = 12) -> GraphDataset:
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, min_nodes=3, max_nodes=7, node_dim=2, edge_dim=1) for _ in range(count)]
    return GraphDataset(graphs, ["train"] * count)


def check_determinism(seed: int = 7) -> CheckResult:
    from .config import ModelConfig, TrainConfig
    from .trainer import pretrain_cl

    def run():
        data = tiny_dataset(seed)
        cfg = TrainConfig(epochs=2, batch_size=4, q=2, seed=seed)
        mc = ModelConfig(hidden=8, num_layers=2)
        a = pretrain_cl(data, cfg, mc).checkpoint
        b = pretrain_cl(data, cfg, mc).checkpoint
        same = a.same_as(b)
        return same, "two identical pretrain-cl runs give " + ("bitwise-equal" if same else "DIFFERENT") + " checkpoints"

    return _timed("determinism", run)


SUITE = {
    "gradients": check_gradients,
    "attention": check_attention_rows,
    "contrastive": check_contrastive_values,
    "approximation": check_approximation,
    "work": check_work_scaling,
    "symmetry": check_symmetry,
    "auc": check_auc_oracle,
    "determinism": check_determinism,
}


def run_suite(names=None) -> list[CheckResult]:
    names = list(SUITE) if names is None else list(names)
    unknown = set(names) - set(SUITE)
    if unknown:
        raise KeyError(f"unknown checks {sorted(unknown)}")
    return [SUITE[n]() for n in names]
