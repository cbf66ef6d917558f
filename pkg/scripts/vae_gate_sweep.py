"""Offline study of the familiarity gate: train a VAE on stage-1 patches only and
report tau and the gate rates on held-out familiar and gap/pit patches.

    python scripts/vae_gate_sweep.py --hidden 512 --latent 36 --steps 2400
"""

import argparse
import time

import numpy as np

from mbc import cooperation as coop
from mbc.config import desk_profile
from mbc.nn import AdamState, Vae, adam_update, vae_step
from mbc.terrain import Kind


def gate_rates(vae, tau, familiar, unfamiliar):
    fam = coop.reconstruction_error(vae, familiar)
    unf = coop.reconstruction_error(vae, unfamiliar)
    return float((fam <= tau).mean()), float((unf > tau).mean())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--latent", type=int, default=36)
    p.add_argument("--steps", type=int, default=2400)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=400)
    p.add_argument("--pool-fields", type=int, default=128)
    p.add_argument("--report-every", type=int, default=400)
    p.add_argument("--by-kind", action="store_true", help="break the gap/pit rate down by kind and difficulty")
    args = p.parse_args(argv)

    cfg = desk_profile()
    n_map = cfg.perception.rows * cfg.perception.cols
    pool = coop.PatchPool(cfg, args.pool_fields, np.random.default_rng(0))
    familiar = coop.sample_patches(cfg, 512, np.random.default_rng(123)).reshape(512, -1)
    unfamiliar = coop.sample_patches(cfg, 512, np.random.default_rng(456), phase=None,
                                     kinds=(Kind.GAP, Kind.PIT)).reshape(512, -1)
    calib = coop.sample_patches(cfg, 2048, np.random.default_rng(789)).reshape(2048, -1)

    rng = np.random.default_rng(1)
    vae = Vae(n_map, args.hidden, args.latent, rng=rng)
    opt = AdamState.zeros(vae.n_params)
    t0 = time.perf_counter()
    for step in range(1, args.steps + 1):
        h = pool.sample(args.batch, rng).reshape(args.batch, -1)
        *_, loss, g = vae_step(vae, h, rng, 1e-3)
        vae.params = adam_update(vae.params, g, args.lr, opt)
        if step % args.report_every == 0 or step == args.steps:
            tau = coop.calibrate_tau(vae, calib)
            fam, unf = gate_rates(vae, tau, familiar, unfamiliar)
            print(f"{step:6d} {time.perf_counter() - t0:6.0f}s loss={loss:.4f} tau={tau:.4f} "
                  f"familiar I=1 {fam:.3f} gap/pit I=0 {unf:.3f}", flush=True)

    if args.by_kind:
        tau = coop.calibrate_tau(vae, calib)
        for kind in (Kind.GAP, Kind.PIT):
            for lo in (0.0, 1 / 3, 2 / 3):
                pats = coop.sample_patches(cfg, 200, np.random.default_rng(7), phase=None, kinds=(kind,),
                                           difficulty=(lo, lo + 1 / 3)).reshape(200, -1)
                rate = float((coop.reconstruction_error(vae, pats) > tau).mean())
                print(f"{kind.value:6s} difficulty {lo:.2f}-{lo + 1 / 3:.2f}: I=0 on {rate:.2f}")


if __name__ == "__main__":
    main()
