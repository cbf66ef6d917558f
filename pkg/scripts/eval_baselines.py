"""Reference controllers (random actions, open-loop gait, standing still) on the
evaluation terrains, to bracket what a trained policy should beat.

    python scripts/eval_baselines.py --trials 20 --steps 600
"""

import argparse

import numpy as np

from mbc import evaluation as ev
from mbc.config import desk_profile
from mbc.env import Termination
from mbc.terrain import Kind, make_spec


class Stand:
    has_percep = False

    def act(self, env, a_blind_prev, a_percep_prev):
        z = np.zeros((env.n, 12))
        return z, z, env.hmap


TERRAINS = {
    "flat": make_spec(Kind.SLOPE, 0.0),
    "gap": make_spec(Kind.GAP, 0.5, width=0.35),
    "pit": make_spec(Kind.PIT, 0.5),
    "pillar": make_spec(Kind.PILLAR, 0.5, seed=1),
    "stairs": make_spec(Kind.STAIRS, 0.0, step_height=0.13, step_width=0.31),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    cfg = desk_profile()
    policies = {"random": ev.RandomPolicy(args.seed), "gait": ev.GaitPolicy(), "stand": Stand()}
    for tname, spec in TERRAINS.items():
        for pname, pol in policies.items():
            rep, out = ev.success_eval(pol, cfg, spec, args.trials, args.seed, args.steps)
            endings = {Termination(r).name: int((out.reasons == r).sum()) for r in np.unique(out.reasons)}
            print(f"{tname:7s} {pname:7s} success {rep.success_rate:.2f} mxd {rep.mxd:+.2f} "
                  f"collided {out.collided.mean():.2f} {endings}")


if __name__ == "__main__":
    main()
