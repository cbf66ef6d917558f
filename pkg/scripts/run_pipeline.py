"""Stage 1, stage 2 and the evaluation protocols in one go.

    python scripts/run_pipeline.py --out runs/desk0 --seed 0
"""

import argparse
import json
import logging
import time
from pathlib import Path

from mbc import evaluation as ev
from mbc.config import load_config
from mbc.terrain import Kind, make_spec
from mbc.training import load_policy, train_stage1, train_stage2

log = logging.getLogger("pipeline")

EVAL_TERRAINS = {
    "gap": make_spec(Kind.GAP, 0.5, width=0.35),
    "pit": make_spec(Kind.PIT, 0.5),
    "pillar": make_spec(Kind.PILLAR, 0.5, seed=1),
    "stairs": make_spec(Kind.STAIRS, 0.0, step_height=0.13, step_width=0.31),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--stage1-iterations", type=int)
    p.add_argument("--stage2-iterations", type=int)
    p.add_argument("--trials", type=int)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if rec["iteration"] % 25 == 0:
            log.info("it %d return %.3f", rec["iteration"], rec["mean_return"])

    t0 = time.perf_counter()
    s1 = train_stage1(cfg, out / "stage1", args.stage1_iterations, progress)
    log.info("stage 1 done in %.0fs, tau=%.4f", time.perf_counter() - t0, s1.tau)
    t0 = time.perf_counter()
    train_stage2(cfg, s1, out / "stage2", args.stage2_iterations, progress)
    log.info("stage 2 done in %.0fs", time.perf_counter() - t0)

    policy, _ = load_policy(out / "stage2" / "stage2.ckpt", cfg)
    summary = {}
    for name, spec in EVAL_TERRAINS.items():
        rep, _ = ev.success_eval(policy, cfg, spec, args.trials)
        ev.write_report(rep, out / f"success_{name}.json", out / "results.csv")
        blind, _ = ev.blind_failure_eval(policy, cfg, spec, args.trials)
        ev.write_report(blind, out / f"blind_{name}.json", out / "results.csv")
        summary[name] = {"success": rep.success_rate, "blind_success": blind.success_rate, "blind_mxd": blind.mxd}
        log.info("%s: success %.2f, blind %.2f (mxd %.2f)", name, rep.success_rate, blind.success_rate, blind.mxd)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
