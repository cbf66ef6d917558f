"""Command line: train, evaluate, generate terrain, inspect checkpoints."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig, load_config
from .metrics import log_metrics  # noqa: F401  (re-exported for scripts)
from .persistence import CheckpointError, load_checkpoint
from .terrain import Kind, TerrainError, TerrainSpec, generate_heightfield, make_spec, write_csv, write_text_grid

log = logging.getLogger("mbc")


class UsageError(Exception):
    pass


def parse_terrain(text: str) -> TerrainSpec:
    """Terrain from a JSON/YAML file or ``kind[:key=value,...]``.

    ``difficulty`` and ``seed`` are reserved keys; anything else overrides a
    shape parameter, e.g. ``gap:width=0.35`` or ``stairs:step_height=0.13,step_width=0.31``.
    """
    path = Path(text)
    if path.suffix in (".json", ".yaml", ".yml"):
        if not path.exists():
            raise UsageError(f"terrain file not found: {text}")
        data = yaml.safe_load(path.read_text())
        return TerrainSpec.from_dict(data)
    kind, _, rest = text.partition(":")
    try:
        kind = Kind(kind)
    except ValueError:
        raise UsageError(f"unknown terrain kind {kind!r}; choose from {[k.value for k in Kind]}") from None
    values = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"terrain parameter {item!r} is not key=value")
        try:
            values[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"terrain parameter {key!r} needs a number, got {val!r}") from None
    difficulty = values.pop("difficulty", 0.0)
    seed = int(values.pop("seed", 0))
    return make_spec(kind, difficulty, seed, **values)


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), "full" if getattr(args, "full", False) else "desk")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def write_manifest(out: Path, cfg: RunConfig, argv: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"argv": argv, "config_hash": cfg.config_hash(), "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


# -- commands --------------------------------------------------------------------

def cmd_train(args, argv) -> int:
    from .training import Trainer, coop

    cfg = resolve_config(args)
    out = Path(args.out)
    if args.stage == "stage2" and not args.from_ckpt and not args.resume:
        raise UsageError("train stage2 requires --from STAGE1_CKPT")
    write_manifest(out, cfg, argv)
    if args.resume:
        trainer = Trainer.resume(cfg, load_checkpoint(args.resume), out)
    elif args.stage == "stage1":
        trainer = Trainer(cfg, coop.STAGE1, out)
    else:
        trainer = Trainer(cfg, coop.STAGE2, out, stage1=load_checkpoint(args.from_ckpt, "stage1"))

    def report(rec):
        log.info("iter %d  return %.4f  episode %.1f", rec["iteration"], rec["mean_return"],
                 rec.get("mean_episode_length", float("nan")))

    bundle = trainer.train(args.iterations, callback=report)
    print(f"wrote {out / (bundle.kind + '.ckpt')}  tau={bundle.tau}")
    return 0


def cmd_eval(args, argv) -> int:
    from . import evaluation as ev
    from .training import load_policy

    spec = parse_terrain(args.terrain)
    policy, bundle = load_policy(args.ckpt)
    cfg = policy.cfg
    if args.seed is not None:
        cfg.seed = args.seed
    n = args.trials or cfg.eval.trials
    if args.protocol == "success":
        report, out = ev.success_eval(policy, cfg, spec, n, cfg.seed, args.steps)
    elif args.protocol == "blind":
        report, out = ev.blind_failure_eval(policy, cfg, spec, n, cfg.seed, args.steps)
    else:
        report, out = ev.hot_swap_test(policy, cfg, spec, args.toggle_step, n, cfg.seed, args.steps)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ev.write_report(report, args.out, args.results)
    if args.trace:
        ev.write_trace_csv(out.trace, args.trace)
    print(f"{report.protocol}: success {report.success_rate:.3f}  MXD {report.mxd:.3f} m  ({report.n_trials} trials)")
    return 0


def cmd_terrain(args, argv) -> int:
    cfg = resolve_config(args)
    spec = parse_terrain(args.spec)
    hf = generate_heightfield(spec, cfg.terrain, strict=not args.loose)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "csv" or out.suffix == ".csv":
        write_csv(out, hf)
    else:
        write_text_grid(out, hf.cells, hf.origin, hf.resolution)
    print(f"{spec.kind.value} {hf.cells.shape[0]}x{hf.cells.shape[1]} cells -> {out}")
    return 0


def cmd_ckpt(args, argv) -> int:
    bundle = load_checkpoint(args.path)
    print(f"kind: {bundle.kind}")
    print(f"tau: {bundle.tau}")
    print(f"iteration: {bundle.counters.get('iteration')}")
    cfg = RunConfig.from_dict(json.loads(bundle.config_text))
    print(f"config hash: {cfg.config_hash()}")
    from .training import build_nets
    nets = build_nets(cfg, np.random.default_rng(0), bundle.kind == "stage2")
    layers = {"blind/actor": nets.blind.actor, "blind/critic": nets.blind.critic,
              "priv_encoder": nets.priv_enc, "history_encoder": nets.hist_enc}
    if nets.percep is not None:
        layers.update({"percep/actor": nets.percep.actor, "percep/critic": nets.percep.critic})
    for name, net in layers.items():
        shapes = " ".join(f"{a}x{b}" for a, b in net.shapes)
        print(f"  {name}: {shapes}")
    print(f"  vae: encoder {' '.join(f'{a}x{b}' for a, b in nets.vae.enc.shapes)}, "
          f"decoder {' '.join(f'{a}x{b}' for a, b in nets.vae.dec.shapes)}")
    model = [n for n in sorted(bundle.blocks) if not n.startswith(("env/", "opt/"))]
    print("blocks:")
    for name in model:
        print(f"  {name}: {tuple(bundle.blocks[name].shape)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML/JSON overrides layered on the profile")
            prof = p.add_mutually_exclusive_group()
            prof.add_argument("--desk", action="store_true", help="desk-scale profile (default)")
            prof.add_argument("--full", action="store_true", help="full-scale network and env sizes")
        p.add_argument("--seed", type=int, help="override the config seed")

    train = sub.add_parser("train", help="run a training stage")
    train.add_argument("stage", choices=("stage1", "stage2"))
    common(train)
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--from", dest="from_ckpt", help="stage-1 checkpoint (stage2 only)")
    train.add_argument("--resume", help="continue from a checkpoint written by this stage")
    train.add_argument("--iterations", type=int, help="override the iteration count")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="run an evaluation protocol")
    ev.add_argument("protocol", choices=("success", "blind", "hotswap"))
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--terrain", required=True, help="kind[:key=value,...] or a JSON/YAML spec file")
    ev.add_argument("--trials", type=int)
    ev.add_argument("--steps", type=int)
    ev.add_argument("--toggle-step", type=int, default=250, help="hotswap: step at which perception fails")
    ev.add_argument("--out", required=True, help="JSON report path")
    ev.add_argument("--results", help="CSV to append a summary row to")
    ev.add_argument("--trace", help="per-trial trajectory CSV")
    ev.add_argument("--seed", type=int)
    ev.set_defaults(func=cmd_eval)

    ter = sub.add_parser("terrain", help="terrain utilities")
    ter_sub = ter.add_subparsers(dest="terrain_command", required=True)
    gen = ter_sub.add_parser("gen", help="write a heightfield")
    common(gen)
    gen.add_argument("--spec", required=True, help="kind[:key=value,...] or a JSON/YAML spec file")
    gen.add_argument("--out", required=True)
    gen.add_argument("--format", choices=("grid", "csv"), default="grid")
    gen.add_argument("--loose", action="store_true", help="allow parameters outside the curriculum ranges")
    gen.set_defaults(func=cmd_terrain)

    ck = sub.add_parser("ckpt", help="checkpoint utilities")
    ck_sub = ck.add_subparsers(dest="ckpt_command", required=True)
    ins = ck_sub.add_parser("inspect", help="print schema, tau and iteration")
    ins.add_argument("path")
    ins.set_defaults(func=cmd_ckpt)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 4
    except TerrainError as exc:
        print(f"terrain error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 6


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
