"""Evaluation protocols: obstacle success, perception failure and perception hot swap."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .env import N_JOINTS, Termination
from .terrain import Kind, TerrainSpec
from .vecenv import VecEnv, fixed_sampler

# Full-scale simulation figures kept for context only; desk-scale runs are not expected to match them.
REFERENCE = {
    ("success", "gap"): {"width": 0.35, "success_rate": 0.993},
    ("blind", "stairs"): {"step_height": 0.13, "step_width": 0.31, "success_rate": 0.97, "mxd": 19.97},
}
BLIND_FAILURES = (Termination.FALL_OVER, Termination.STUCK, Termination.COLLISION)


@dataclass
class EvalReport:
    protocol: str
    terrain: dict
    n_trials: int
    success_rate: float
    mxd: float
    reasons: list[int]
    config_hash: str
    seed: int
    repeat_success: list[float] = field(default_factory=list)
    stumbles: float = 0.0
    action_jump: float | None = None
    toggle_step: int | None = None
    reference: dict | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success rate must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


@dataclass
class Trace:
    pos: np.ndarray  # (steps, n, 3)
    rpy: np.ndarray
    a_blind: np.ndarray  # (steps, n, 12)
    a_percep: np.ndarray
    hmap_max: np.ndarray  # (steps, n) max |cell| of the map the perceptive actor saw
    done: np.ndarray  # (steps, n)


@dataclass
class Outcome:
    reasons: np.ndarray
    crossed: np.ndarray  # base passed the feature's far edge before termination
    reached_goal: np.ndarray
    collided: np.ndarray
    displacement: np.ndarray
    stumbles: np.ndarray
    action_jump: float | None
    trace: Trace


# -- policies usable by the protocols --------------------------------------------

class RandomPolicy:
    """Gaussian joint actions, a reference for how an untrained controller fares."""

    has_percep = False

    def __init__(self, seed: int = 0, std: float = 1.0):
        self.rng = np.random.default_rng(seed)
        self.std = std

    def act(self, env: VecEnv, a_blind_prev, a_percep_prev):
        a = self.std * self.rng.standard_normal((env.n, N_JOINTS))
        return a, np.zeros_like(a), env.hmap


class GaitPolicy:
    """Open-loop diagonal trot that always walks forward."""

    has_percep = False

    def __init__(self, amplitude: float = 1.0, lift: float = 1.5, frequency: float = 3.0):
        self.amplitude, self.lift, self.frequency = amplitude, lift, frequency

    def act(self, env: VecEnv, a_blind_prev, a_percep_prev):
        t = env.state.age * env.cfg.env.control_dt
        a = np.zeros((env.n, N_JOINTS))
        for leg, offset in enumerate((0.0, np.pi, np.pi, 0.0)):
            phase = 2 * np.pi * self.frequency * t + offset
            a[:, 3 * leg + 1] = self.amplitude * np.cos(phase)
            a[:, 3 * leg + 2] = -self.lift * np.maximum(0.0, -np.sin(phase))
        return a, np.zeros_like(a), env.hmap


# -- core loop --------------------------------------------------------------------

def run_episodes(policy, cfg: RunConfig, spec: TerrainSpec, n: int, seed: int, steps: int,
                 v_cmd: float | None = None, toggle_step: int | None = None,
                 perception: bool = True, jump_window: int = 10) -> Outcome:
    """Run ``n`` independent trials on ``spec`` for ``steps`` control steps.

    Perception starts ``perception`` and is switched off at ``toggle_step``.
    Finished trials stay frozen at their terminal state.
    """
    env = VecEnv(cfg, n, fixed_sampler(spec), seed, auto_reset=False, curriculum=False,
                 command_vx=v_cmd, strict_terrain=False)
    if not perception:
        env.set_perception(False)
    hf = env.terrain.fields[0]
    far_edge = hf.feature_span[1]
    spawn_x = hf.spawn_pose[0]
    a_b_prev = np.zeros((n, N_JOINTS))
    a_p_prev = np.zeros((n, N_JOINTS))
    crossed = np.zeros(n, dtype=bool)
    reached = np.zeros(n, dtype=bool)
    collided = np.zeros(n, dtype=bool)
    stumbles = np.zeros(n)
    last_action = np.zeros((n, N_JOINTS))
    jumps = []
    rec = {k: [] for k in ("pos", "rpy", "a_blind", "a_percep", "hmap_max", "done")}
    for t in range(steps):
        if toggle_step is not None and t == toggle_step:
            env.set_perception(False)
        a_b, a_p, hmap = policy.act(env, a_b_prev, a_p_prev)
        a = a_b + a_p if policy.has_percep else a_b
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite action at step {t}")
        if toggle_step is not None and toggle_step - 1 <= t < toggle_step + jump_window and t > 0:
            live = ~env.done
            if live.any():
                jumps.append(float(np.max(np.linalg.norm(a[live] - last_action[live], axis=1))))
        live_before = ~env.done
        _, dones, info = env.step(a)
        ev = info["events"]
        stumbles += np.where(live_before, ev.stumble, 0.0)
        collided |= live_before & ev.collision
        x = env.state.pos[:, 0]
        crossed |= live_before & (x > far_edge) & ~(dones & (info["reason"] != Termination.TIMEOUT))
        reached |= live_before & (x >= hf.goal_x)
        rec["pos"].append(env.state.pos.copy())
        rec["rpy"].append(env.state.rpy.copy())
        rec["a_blind"].append(a_b.copy())
        rec["a_percep"].append(a_p.copy())
        rec["hmap_max"].append(np.abs(hmap.reshape(n, -1)).max(axis=1))
        rec["done"].append(env.done.copy())
        last_action = a
        a_b_prev, a_p_prev = a_b, a_p
        if env.done.all():
            break
    trace = Trace(**{k: np.stack(v) for k, v in rec.items()})
    return Outcome(env.reason.copy(), crossed, reached, collided, env.state.pos[:, 0] - spawn_x, stumbles,
                   max(jumps) if jumps else None, trace)


def _repeat_rates(success: np.ndarray, repeats: int) -> list[float]:
    groups = [g for g in np.array_split(success, max(1, min(repeats, len(success)))) if len(g)]
    return [float(g.mean()) for g in groups]


def _report(protocol: str, cfg: RunConfig, spec: TerrainSpec, seed: int, success: np.ndarray,
            out: Outcome, repeats: int, **extra) -> EvalReport:
    rates = _repeat_rates(success, repeats)
    return EvalReport(protocol, spec.to_dict(), len(success), float(np.mean(rates)),
                      float(np.mean(out.displacement)), [int(r) for r in out.reasons], cfg.config_hash(), seed,
                      rates, float(out.stumbles.mean()), reference=REFERENCE.get((protocol, spec.kind.value)),
                      **extra)


def obstacle_success(spec: TerrainSpec, out: Outcome) -> np.ndarray:
    if spec.kind is Kind.PILLAR:
        return out.reached_goal & ~out.collided
    return out.crossed


def blind_success(out: Outcome) -> np.ndarray:
    return ~np.isin(out.reasons, [int(r) for r in BLIND_FAILURES])


def success_eval(policy, cfg: RunConfig, spec: TerrainSpec, n_trials: int | None = None, seed: int = 0,
                 steps: int | None = None, repeats: int | None = None) -> tuple[EvalReport, Outcome]:
    n = n_trials or cfg.eval.trials
    out = run_episodes(policy, cfg, spec, n, seed, steps or cfg.eval.steps, cfg.eval.v_cmd)
    return _report("success", cfg, spec, seed, obstacle_success(spec, out), out, repeats or cfg.eval.repeats), out


def blind_failure_eval(policy, cfg: RunConfig, spec: TerrainSpec, n_trials: int | None = None, seed: int = 0,
                       steps: int | None = None, v_cmd: float | None = None,
                       repeats: int | None = None) -> tuple[EvalReport, Outcome]:
    n = n_trials or cfg.eval.trials
    out = run_episodes(policy, cfg, spec, n, seed, steps or cfg.eval.steps,
                       cfg.eval.v_cmd if v_cmd is None else v_cmd, perception=False)
    return _report("blind", cfg, spec, seed, blind_success(out), out, repeats or cfg.eval.repeats), out


def hot_swap_test(policy, cfg: RunConfig, spec: TerrainSpec, toggle_step: int, n_trials: int | None = None,
                  seed: int = 0, steps: int | None = None, repeats: int | None = None) -> tuple[EvalReport, Outcome]:
    n = n_trials or cfg.eval.trials
    out = run_episodes(policy, cfg, spec, n, seed, steps or cfg.eval.steps, cfg.eval.v_cmd, toggle_step=toggle_step)
    return _report("hotswap", cfg, spec, seed, blind_success(out), out, repeats or cfg.eval.repeats,
                   action_jump=out.action_jump, toggle_step=toggle_step), out


# -- output ---------------------------------------------------------------------

RESULT_FIELDS = ("protocol", "kind", "terrain", "n_trials", "success_rate", "mxd", "stumbles", "action_jump",
                 "config_hash", "seed")


def write_report(report: EvalReport, json_path: str | Path, results_csv: str | Path | None = None) -> None:
    Path(json_path).write_text(report.to_json())
    if results_csv is None:
        return
    path = Path(results_csv)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_FIELDS)
        w.writerow([report.protocol, report.terrain["kind"], json.dumps(report.terrain["params"], sort_keys=True),
                    report.n_trials, repr(report.success_rate), repr(report.mxd), repr(report.stumbles),
                    "" if report.action_jump is None else repr(report.action_jump), report.config_hash, report.seed])


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    steps, n, _ = trace.pos.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "trial", "x", "y", "z", "roll", "pitch", "yaw", "done"))
        for t in range(steps):
            for k in range(n):
                w.writerow((t, k, *map(repr, trace.pos[t, k]), *map(repr, trace.rpy[t, k]), int(trace.done[t, k])))
