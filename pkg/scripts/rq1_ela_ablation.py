"""Bi-space vs true-only vs surrogate-only landscape state.

Trains one policy per (ELA mode, seed), evaluates each greedily on the
held-out task and writes ``ablation_ela_mode.csv`` with log2 HV ratios
against the bi-space arm.

    python3 scripts/rq1_ela_ablation.py --seeds 3 --out runs/rq1
"""

import numpy as np

from _common import config, parser, say
from metasaea.experiment import ablation

MODES = ("bi", "true_only", "sur_only")


def main():
    args = parser(__doc__.splitlines()[0], "runs/rq1").parse_args()
    cfg = config(args)
    arms = ablation(cfg, "ela_mode", MODES, cfg.seeds, baseline="bi", out=args.out, log=say)
    for mode, arm in arms.items():
        print(f"{mode:10s} HV {np.mean(arm.hv):.4f} +/- {np.std(arm.hv):.4f}")


if __name__ == "__main__":
    main()
