"""Command-line entry point: ``metasaea train|loto|eval|surrogate-bench|hv``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .agent import MetaPolicy
from .config import RunConfig, load_config, paper_scale
from .pareto import hypervolume, nondominated
from .problems import ConfigError
from .tensor import CheckpointError


def _base_config(args) -> RunConfig:
    base = paper_scale() if getattr(args, "paper_scale", False) else RunConfig()
    cfg = load_config(args.config, base)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    cfg = _base_config(args)
    out = Path(args.out)
    res = experiment.train(cfg, out=out, log=_say)
    early, late = res.early_late(min(10, len(res.curve)))
    print(json.dumps({"out": str(out), "rounds": cfg.rounds, "tasks": len(cfg.tasks),
                      "early_reward": early, "late_reward": late, "seconds": round(res.seconds, 1)}))
    return 0


def cmd_loto(args) -> int:
    cfg = _base_config(args)
    _, summary = experiment.loto(cfg, out=args.out, log=_say)
    for row in summary:
        print(f"fold {row['fold']} ({row['held_out']}): HV {row['hv_mean']:.4f} +/- {row['hv_std']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    task = args.task or cfg.test_task()
    seeds = list(range(args.repeats if args.repeats is not None else cfg.repeats))
    policy = MetaPolicy.load(args.checkpoint, expect_h=cfg.h) if args.checkpoint else None
    rows = experiment.compare(cfg, task, seeds, policy, baseline=args.baseline, out=args.out)
    for r in rows:
        line = f"seed {r['seed']}: {args.baseline} HV {r['baseline_hv']:.4f}"
        if "policy_hv" in r:
            line += f"  policy HV {r['policy_hv']:.4f}  log2 ratio {r['log2_hv_ratio']:+.4f}"
        print(line)
    return 0


def cmd_bench(args) -> int:
    cfg = _base_config(args)
    _, summary = experiment.surrogate_bench(cfg, evals=args.evals, out=args.out)
    for r in summary:
        print(f"{r['task']} {r['backend']}: rmse {r['rmse']:.4f} coverage(2sd) {r['coverage_2sd']:.3f}")
    return 0


def cmd_hv(args) -> int:
    pts = np.loadtxt(args.points, delimiter=",", comments="#", ndmin=2)
    ref = np.array([float(v) for v in args.ref.split(",")])
    if len(ref) == 1:
        ref = np.full(pts.shape[1], ref[0])
    print(f"{hypervolume(pts[nondominated(pts)], ref):.12g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metasaea", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", default=None, help="flat key = value config file")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--paper-scale", action="store_true", help="use the full-scale schedule")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("train", help="train the meta-policy")
    common(sp, "runs/train")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("loto", help="leave-one-task-out cross-validation")
    common(sp, "runs/loto")
    sp.set_defaults(fn=cmd_loto)

    sp = sub.add_parser("eval", help="zero-shot evaluation against a baseline")
    common(sp, "runs/eval")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--task", default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--baseline", choices=["random", "fixed"], default="random")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("surrogate-bench", help="ensemble vs GP prediction quality")
    common(sp, "runs/bench")
    sp.add_argument("--evals", type=int, default=40)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("hv", help="hypervolume of a CSV point file")
    sp.add_argument("points")
    sp.add_argument("--ref", required=True, help="comma separated reference point (or one value)")
    sp.set_defaults(fn=cmd_hv)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
