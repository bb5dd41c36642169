"""Command-line interface.

Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 data
error (unparseable or invalid dataset/checkpoint/config), 3 check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DataError, load_dataset, save_dataset, synth_motif_benchmark

log = logging.getLogger("gmpt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _q_list(text: str) -> list[int]:
    try:
        qs = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not qs or min(qs) < 1:
        raise argparse.ArgumentTypeError("q values must be positive integers")
    return qs


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmpt", description="Graph-matching based GNN pre-training.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", type=Path, help="JSON run config")
        sp.add_argument("--seed", type=int, help="overrides train.seed")
        if data:
            sp.add_argument("--data", type=Path, required=True, help="line-delimited JSON dataset")
        if out:
            sp.add_argument("--out", type=Path, required=True)
        return sp

    sp = common(sub.add_parser("pretrain-cl", help="contrastive pre-training (GMPT-CL)"))
    sp.add_argument("--q", type=int, help="anchors per batch; overrides train.q")

    sp = common(sub.add_parser("pretrain-sup", help="supervised pre-training (GMPT-Sup / Sup++)"))
    sp.add_argument("--mode", choices=("continuous", "discrete"), required=True)

    sp = common(sub.add_parser("finetune", help="fine-tune with a fresh head; no --ckpt means random init"))
    sp.add_argument("--ckpt", type=Path)

    sp = common(sub.add_parser("evaluate", help="pretrained vs random init over several seeds"))
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--seeds", type=int, default=10, help="number of fine-tune seeds")

    sp = common(sub.add_parser("bench", help="time and matching work per epoch across q"), data=False, out=False)
    sp.add_argument("--data", type=Path, help="dataset of equal-size graphs (default: synthetic)")
    sp.add_argument("--out", type=Path, help="write the table as CSV")
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--q", type=int)
    group.add_argument("--q-list", type=_q_list, default=[1, 2, 4, 8])
    sp.add_argument("--num-graphs", type=int, default=128)
    sp.add_argument("--num-nodes", type=int, default=20)

    sp = sub.add_parser("gradcheck", help="run the property suite")
    sp.add_argument("--only", action="append", help="run just the named check (repeatable)")
    sp.add_argument("--extended", action="store_true", help="also gradient-check the slower pipelines")

    sp = common(sub.add_parser("synth", help="write the synthetic motif benchmark"), data=False)
    sp.add_argument("--mode", choices=("continuous", "discrete"), default="discrete", help="coarse label kind")
    sp.add_argument("--num-pretrain", type=int, default=2000)
    sp.add_argument("--num-downstream", type=int, default=300)
    return p


# ---------------------------------------------------------------------------
# helpers


def _require_file(path: Path | None, what: str):
    if path is not None and not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def resolve_config(args, mode: str | None = None) -> RunConfig:
    _require_file(args.config, "config")
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "q", None) is not None:
        cfg.train.q = args.q
    if mode is not None:
        if args.config and cfg.train.mode != "cl" and cfg.train.mode != mode:
            raise UsageError(f"--mode selects {mode!r} but the config sets train.mode {cfg.train.mode!r}")
        cfg.train.mode = mode
    # re-validate after overrides
    cfg = RunConfig.from_dict(cfg.to_dict())
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("seed: %d", cfg.train.seed)
    return cfg


def _write_config(cfg: RunConfig, out: Path):
    cfg.dump(out.with_name(out.name + ".config.json"))


def _write_table(rows: list[dict], path: Path | None):
    if not rows:
        return
    cols = list(rows[0])
    w = csv.DictWriter(sys.stdout, fieldnames=cols, delimiter="\t", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)


def _task_rows(report) -> list[dict]:
    rows = [{"task": t, "test_auc": v} for t, v in enumerate(report.test_per_task)]
    rows.append({"task": "mean", "test_auc": report.test_auc})
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain_cl(args) -> int:
    from .trainer import pretrain_cl

    cfg = resolve_config(args, "cl")
    _require_file(args.data, "dataset")
    data = load_dataset(args.data)
    res = pretrain_cl(data, cfg.train, cfg.model)
    save_checkpoint(res.checkpoint, args.out)
    _write_config(cfg, args.out)
    print(f"wrote {args.out} (final loss {res.history[-1].loss:.4f})" if res.history else f"wrote {args.out}")
    return EXIT_OK


def cmd_pretrain_sup(args) -> int:
    from .trainer import pretrain_sup

    cfg = resolve_config(args, f"sup-{args.mode}")
    _require_file(args.data, "dataset")
    data = load_dataset(args.data)
    res = pretrain_sup(data, cfg.train, cfg.model)
    save_checkpoint(res.checkpoint, args.out)
    _write_config(cfg, args.out)
    print(f"wrote {args.out} (final loss {res.history[-1].loss:.4f})" if res.history else f"wrote {args.out}")
    return EXIT_OK


def _load_ckpt(path: Path | None):
    if path is None:
        return None
    _require_file(path, "checkpoint")
    return load_checkpoint(path)


def cmd_finetune(args) -> int:
    from .trainer import finetune_grid

    cfg = resolve_config(args, "finetune")
    _require_file(args.data, "dataset")
    ckpt = _load_ckpt(args.ckpt)
    data = load_dataset(args.data)
    if ckpt is None:
        log.info("no --ckpt: fine-tuning from random initialization (w/o pre-training)")
    rep = finetune_grid(ckpt, data, cfg.train, cfg.model)
    print(
        f"{'pretrained' if rep.pretrained else 'random init'}: lr {rep.lr} best epoch {rep.best_epoch} "
        f"valid {rep.valid_auc:.4f} test {rep.test_auc:.4f}"
    )
    _write_table(_task_rows(rep), args.out)
    _write_config(cfg, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .experiments import TransferOutcome, compare_finetune

    cfg = resolve_config(args, "finetune")
    _require_file(args.data, "dataset")
    ckpt = _load_ckpt(args.ckpt)
    data = load_dataset(args.data)
    seeds = [cfg.train.seed + i for i in range(args.seeds)]
    baseline, pretrained = compare_finetune(ckpt, data, cfg.train, cfg.model, seeds)
    outcome = TransferOutcome(baseline, pretrained, [], 0.0)
    rep = outcome.task_report()
    print(
        f"pretrained >= random init in {outcome.wins}/{len(seeds)} seeds, "
        f"mean improvement {outcome.mean_improvement:+.4f}; "
        f"{rep.negative} negative-transfer tasks, worst {rep.worst_negative:+.4f}; "
        f"all pretrained task AUCs > 0.5: {rep.all_above_half}"
    )
    _write_table(rep.as_rows(), args.out)
    _write_config(cfg, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .experiments import bench, equal_size_graphs

    cfg = resolve_config(args)
    if args.data is not None:
        _require_file(args.data, "dataset")
        data = load_dataset(args.data)
        if len(set(g.num_nodes for g in data.graphs)) > 1:
            log.warning("graphs differ in size; sim_op_count will not scale exactly with q")
    else:
        data = equal_size_graphs(args.num_graphs, args.num_nodes, cfg.train.seed)
    q_list = [args.q] if args.q is not None else args.q_list
    rows = bench(q_list, data, cfg.train, cfg.model)
    _write_table([r.as_dict() for r in rows], args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import checks

    names = args.only or list(checks.SUITE)
    unknown = sorted(set(names) - set(checks.SUITE))
    if unknown:
        raise UsageError(f"unknown checks {unknown}; available: {sorted(checks.SUITE)}")
    ok = True
    for name in names:
        fn = checks.SUITE[name]
        res = fn(extended=True) if name == "gradients" and args.extended else fn()
        print(res.line(), flush=True)
        ok &= res.passed
    print("all checks passed" if ok else "CHECK FAILURE")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    pre, down = synth_motif_benchmark(
        cfg.train.seed, args.num_pretrain, args.num_downstream, coarse=args.mode
    )
    args.out.mkdir(parents=True, exist_ok=True)
    save_dataset(pre, args.out / "pretrain.jsonl")
    save_dataset(down, args.out / "downstream.jsonl")
    print(f"wrote {len(pre)} pretrain and {len(down)} downstream graphs to {args.out}")
    return EXIT_OK


COMMANDS = {
    "pretrain-cl": cmd_pretrain_cl,
    "pretrain-sup": cmd_pretrain_sup,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"gmpt: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ConfigError) as e:
        print(f"gmpt: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # invariant violations raised while training (labels, dims, splits)
        print(f"gmpt: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
