"""Train per seed, then test greedily on the held-out task against the random baseline.

    python3 scripts/zero_shot.py --seeds 10 --out runs/zero_shot
"""

from pathlib import Path

import numpy as np

from _common import config, parser, say
from metasaea.experiment import compare, train


def main():
    args = parser(__doc__.splitlines()[0], "runs/zero_shot").parse_args()
    cfg = config(args)
    task = cfg.test_task()
    wins, ratios = 0, []
    for s in cfg.seeds:
        res = train(cfg, seed=s, out=Path(args.out) / f"seed_{s}", log=say)
        row = compare(cfg, task, [s], res.policy, "random", out=Path(args.out) / f"seed_{s}")[0]
        wins += row["policy_hv"] >= row["baseline_hv"]
        ratios.append(row["log2_hv_ratio"])
        print(f"seed {s}: policy {row['policy_hv']:.4f} random {row['baseline_hv']:.4f}", flush=True)
    print(f"{task}: policy >= random in {wins}/{len(cfg.seeds)} seeds, mean log2 ratio {np.mean(ratios):+.4f}")


if __name__ == "__main__":
    main()
