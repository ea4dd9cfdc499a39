"""Dual control vs infill-only vs EA-only.

Same protocol as the ELA ablation, varying which actions the policy may take.
Writes ``ablation_control.csv`` with log2 HV ratios against EA-only.

    python3 scripts/rq4_control_ablation.py --seeds 10 --out runs/rq4
"""

import numpy as np

from _common import config, parser, say
from metasaea.experiment import ablation

CONTROLS = ("dual", "infill_only", "ea_only")


def main():
    args = parser(__doc__.splitlines()[0], "runs/rq4").parse_args()
    cfg = config(args)
    arms = ablation(cfg, "control", CONTROLS, cfg.seeds, baseline="ea_only", out=args.out, log=say)
    for mode, arm in arms.items():
        print(f"{mode:12s} HV {np.mean(arm.hv):.4f} +/- {np.std(arm.hv):.4f}")


if __name__ == "__main__":
    main()
