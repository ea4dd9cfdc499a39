"""Argument handling shared by the experiment scripts."""

import argparse
import sys

from metasaea.config import RunConfig, load_config, paper_scale


def parser(description: str, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (default: config)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=out)
    return p


def config(args) -> RunConfig:
    cfg = load_config(args.config, paper_scale() if args.paper_scale else RunConfig())
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seeds is not None:
        cfg.seeds = list(range(args.seeds))
    return cfg


def say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)
