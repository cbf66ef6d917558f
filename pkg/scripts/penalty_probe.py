"""Stage-2 runs from one stage-1 checkpoint at several action-penalty
coefficients; prints the familiar-terrain penalty P per iteration.

    python scripts/penalty_probe.py runs/desk0/stage1/stage1.ckpt --lambdas 0 0.01 1.0 --iterations 30
"""

import argparse

from mbc import cooperation as coop
from mbc.config import load_config
from mbc.persistence import load_checkpoint
from mbc.training import Trainer


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("ckpt")
    p.add_argument("--config")
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.01, 1.0])
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--every", type=int, default=5)
    args = p.parse_args(argv)

    stage1 = load_checkpoint(args.ckpt, "stage1")
    for lam in args.lambdas:
        cfg = load_config(args.config)
        cfg.stage2.action_penalty = lam
        tr = Trainer(cfg, coop.STAGE2, stage1=stage1)
        for _ in range(args.iterations):
            rec = tr.run_iteration()
            if rec["iteration"] % args.every == 0:
                print(f"lambda={lam:g} it {rec['iteration']:4d} return {rec['mean_return']:+.3f} "
                      f"familiar P {rec['familiar_P']:.4g} mean I {rec['mean_I']:.3f}", flush=True)


if __name__ == "__main__":
    main()
