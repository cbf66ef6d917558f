"""Batched runner around the surrogate: resets, curriculum, pushes, maps, history."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import RunConfig
from .env import (
    N_JOINTS, OBS_DIM, Command, DomainParams, Events, RobotState, Termination, apply_push,
    body_velocity, check_termination, compute_rewards, concat_params, heading_yaw_rate,
    physics_step, privileged_vector, proprioception, reset_state, sample_domain_params,
)
from .perception import ElevationSensor
from .persistence import restore_rng, rng_state
from .terrain import Heightfield, Phase, TerrainSpec, TerrainStack, generate_heightfield, sample_terrain_spec

# (env index, difficulty, env rng) -> spec
SpecSampler = Callable[[int, float, np.random.Generator], TerrainSpec]


def phase_sampler(phase: Phase | str, cfg: RunConfig) -> SpecSampler:
    def sample(env: int, difficulty: float, rng: np.random.Generator) -> TerrainSpec:
        return sample_terrain_spec(phase, difficulty, rng, cfg.terrain)
    return sample


def fixed_sampler(spec: TerrainSpec) -> SpecSampler:
    def sample(env: int, difficulty: float, rng: np.random.Generator) -> TerrainSpec:
        return spec
    return sample


def env_rngs(seed: int, n: int, stream: int = 0) -> list[np.random.Generator]:
    """Independent per-environment generators; env k's stream does not depend on n."""
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, k))))
            for k in range(n)]


@dataclass
class EpisodeLog:
    returns: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    reasons: list[int] = field(default_factory=list)
    displacement: list[float] = field(default_factory=list)

    def clear(self) -> None:
        for v in (self.returns, self.lengths, self.reasons, self.displacement):
            v.clear()


class VecEnv:
    """``n`` independent surrogate environments advanced in lock step.

    Every environment owns its generator, terrain, physical parameters and
    sensor noise, so splitting the batch across ``workers`` chunks gives the
    same trajectories as stepping it whole.
    """

    def __init__(self, cfg: RunConfig, n_envs: int, sampler: SpecSampler, seed: int,
                 auto_reset: bool = True, curriculum: bool = True, randomize_start: bool = False,
                 command_vx: float | None = None, initial_difficulty: tuple[float, float] = (0.0, 0.3),
                 strict_terrain: bool = True, workers: int | None = None):
        self.cfg = cfg
        self.n = n_envs
        self.sampler = sampler
        self.auto_reset = auto_reset
        self.curriculum = curriculum
        self.command_vx = command_vx
        self.strict_terrain = strict_terrain
        self.workers = workers if workers is not None else cfg.env.workers
        self.rngs = env_rngs(seed, n_envs, 0)
        noise_rngs = env_rngs(seed, n_envs, 1)
        self.sensor = ElevationSensor(cfg.perception, cfg.heightmap_noise, n_envs, noise_rngs)
        self.ids = np.arange(n_envs)
        self.difficulty = np.array([r.uniform(*initial_difficulty) for r in self.rngs])
        fields = [self._make_field(e) for e in range(n_envs)]
        self.terrain = TerrainStack(fields)
        self.dp = concat_params([sample_domain_params(r, cfg.domain_rand, cfg.env) for r in self.rngs])
        self.priv = privileged_vector(self.dp, cfg.domain_rand)
        spawn = np.array([hf.spawn_pose for hf in fields])
        self.state = reset_state(self.terrain, self.ids, spawn, self.dp, cfg.env)
        self.cmd = Command(np.zeros(n_envs), np.zeros(n_envs), np.zeros(n_envs), np.zeros(n_envs))
        for e in range(n_envs):
            self._sample_command(e)
        if randomize_start:
            # spread timeouts so the batch does not reset in lock step
            self.state.step[:] = [r.integers(0, cfg.env.episode_length) for r in self.rngs]
        self.start_step = self.state.step.copy()
        self.done = np.zeros(n_envs, dtype=bool)
        self.reason = np.zeros(n_envs, dtype=np.int64)
        self.ep_return = np.zeros(n_envs)
        self.ep_len = np.zeros(n_envs, dtype=np.int64)
        self.log = EpisodeLog()
        H = cfg.net.history_len
        self.history = np.zeros((n_envs, H, OBS_DIM))
        self.sensor.reset(self.ids, self._snapshots(self.ids))
        self.o = proprioception(self.state, self.cmd, cfg.env)
        self.history[:, -1] = self.o

    # -- helpers --------------------------------------------------------------

    def _make_field(self, e: int) -> Heightfield:
        spec = self.sampler(e, float(self.difficulty[e]), self.rngs[e])
        return generate_heightfield(spec, self.cfg.terrain, strict=self.strict_terrain)

    def _sample_command(self, e: int) -> None:
        vx = self.command_vx if self.command_vx is not None else \
            float(self.rngs[e].uniform(*self.cfg.env.command_vx))
        self.cmd.vx[e] = vx
        self.cmd.vy[e] = 0.0
        self.cmd.heading[e] = self.terrain.fields[e].spawn_pose[2]
        self.cmd.yaw_rate[e] = heading_yaw_rate(self.cmd.heading[e], self.state.rpy[e, 2]
                                                if hasattr(self, "state") else 0.0, self.cfg.env)

    def _snapshots(self, ids: np.ndarray) -> np.ndarray:
        st = self.state
        return self.sensor.snapshot(self.terrain, ids, st.pos[ids, 0], st.pos[ids, 1],
                                    st.pos[ids, 2], st.rpy[ids, 2])

    @property
    def hmap(self) -> np.ndarray:
        return self.sensor.observe()

    @property
    def v_body(self) -> np.ndarray:
        return body_velocity(self.state)

    def set_perception(self, active: bool, envs=None) -> None:
        self.sensor.set_active(self.ids if envs is None else envs, active)

    # -- stepping -------------------------------------------------------------

    def _chunks(self) -> list[np.ndarray]:
        k = max(1, min(self.workers, self.n))
        return [c for c in np.array_split(self.ids, k) if len(c)]

    def _physics(self, actions: np.ndarray) -> tuple[RobotState, dict]:
        chunks = self._chunks()

        def run(ids):
            return physics_step(self.state.take(ids), actions[ids], self.terrain, ids,
                                self.dp.take(ids), self.cfg.env)

        if len(chunks) == 1:
            return run(chunks[0])
        if self.workers > 1:
            with ThreadPoolExecutor(len(chunks)) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
        new = self.state.copy()
        info = {k: np.zeros(self.n, dtype=v.dtype) for k, v in results[0][1].items()}
        for ids, (st, inf) in zip(chunks, results):
            new.put(ids, st)
            for k, v in inf.items():
                info[k][ids] = v
        return new, info

    def step(self, actions: np.ndarray):
        """Advance every env one control step.

        Returns (rewards, dones, info). ``info['reward_terms']`` holds the
        per-term breakdown; finished episodes are reset when ``auto_reset``.
        """
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n, N_JOINTS):
            raise ValueError(f"actions must be {(self.n, N_JOINTS)}")
        prev = self.state
        new, info = self._physics(actions)

        push_due = (new.age % self.dp.push_interval == 0)
        dv = np.zeros((self.n, 2))
        for e in np.flatnonzero(push_due):
            r = self.rngs[e]
            mag = r.uniform(0.0, self.dp.push_velocity[e])
            ang = r.uniform(0.0, 2 * np.pi)
            dv[e] = mag * np.cos(ang), mag * np.sin(ang)
        if push_due.any():
            apply_push(new, dv)

        self.cmd.yaw_rate = heading_yaw_rate(self.cmd.heading, new.rpy[:, 2], cfg.env)
        reason = check_termination(new, info["collision"], cfg.env)
        timeout = reason == Termination.TIMEOUT
        terminated = (reason != Termination.NONE) & ~timeout
        events = Events(info["stumble"], info["collision_depth"], info["collision"], terminated)
        rb = compute_rewards(prev, new, new.last_action, prev.last_action, new.tau, prev.tau,
                             self.cmd, events, cfg.rewards, cfg.env)
        rewards = rb.total
        dones = reason != Termination.NONE

        if not self.auto_reset:
            # finished envs stay frozen at their terminal state
            frozen = self.done
            if frozen.any():
                new.put(np.flatnonzero(frozen), prev.take(np.flatnonzero(frozen)))
                rewards = np.where(frozen, 0.0, rewards)
                dones = np.where(frozen, False, dones)
                reason = np.where(frozen, self.reason, reason)
        self.state = new
        self.ep_return += np.where(self.done, 0.0, rewards)
        self.ep_len += ~self.done
        self.sensor.push(self._snapshots(self.ids))

        finished = np.flatnonzero(dones)
        out_info = {"reward_terms": rb.terms, "events": events, "reason": reason.copy(),
                    "timeout": timeout & dones, "pushed": dv, "finished": finished}
        for e in finished:
            self.log.returns.append(float(self.ep_return[e]))
            self.log.lengths.append(int(self.ep_len[e]))
            self.log.reasons.append(int(reason[e]))
            self.log.displacement.append(float(new.pos[e, 0] - self.terrain.fields[e].spawn_pose[0]))
        if self.auto_reset:
            if len(finished):
                self._reset_envs(finished, reason[finished])
        else:
            self.done |= dones
            self.reason = np.where(dones, reason, self.reason)

        self.o = proprioception(self.state, self.cmd, cfg.env)
        self.history = np.roll(self.history, -1, axis=1)
        self.history[:, -1] = self.o
        if self.auto_reset and len(finished):
            self.history[finished] = 0.0
            self.history[finished, -1] = self.o[finished]
        return rewards, dones, out_info

    def _reset_envs(self, envs: np.ndarray, reasons: np.ndarray) -> None:
        cfg = self.cfg
        for e, why in zip(envs, reasons):
            if self.curriculum:
                hf = self.terrain.fields[e]
                progress = self.state.pos[e, 0] - hf.spawn_pose[0]
                if self.state.pos[e, 0] > hf.feature_span[1] or progress > cfg.terrain.course_length / 2:
                    self.difficulty[e] = min(1.0, self.difficulty[e] + 0.1)
                elif progress < 1.0:
                    self.difficulty[e] = max(0.0, self.difficulty[e] - 0.1)
            self.terrain.replace(e, self._make_field(e))
            dp_e = sample_domain_params(self.rngs[e], cfg.domain_rand, cfg.env)
            self.dp.put([e], dp_e)
        self.priv[envs] = privileged_vector(self.dp.take(envs), cfg.domain_rand)
        spawn = np.array([self.terrain.fields[e].spawn_pose for e in envs])
        st = reset_state(self.terrain, envs, spawn, self.dp.take(envs), cfg.env)
        self.state.put(envs, st)
        for e in envs:
            self._sample_command(e)
        self.ep_return[envs] = 0.0
        self.ep_len[envs] = 0
        self.sensor.reset(envs, self._snapshots(envs))

    # -- persistence ----------------------------------------------------------

    _SCALARS = ("difficulty", "start_step", "done", "reason", "ep_return", "ep_len", "history", "o", "priv")
    _SENSOR = ("ring", "visible", "active", "age", "ticks")

    def state_dict(self) -> tuple[dict[str, np.ndarray], dict, dict]:
        """(blocks, meta, rng states) sufficient to continue stepping bit-exactly."""
        blocks: dict[str, np.ndarray] = {}
        for name, arr in self.state.arrays().items():
            blocks[f"state/{name}"] = arr.astype(float)
        for name, arr in self.dp.arrays().items():
            blocks[f"dp/{name}"] = arr.astype(float)
        for name in ("vx", "vy", "yaw_rate", "heading"):
            blocks[f"cmd/{name}"] = getattr(self.cmd, name).astype(float)
        for name in self._SCALARS:
            blocks[name] = getattr(self, name).astype(float)
        for name in self._SENSOR:
            blocks[f"sensor/{name}"] = getattr(self.sensor, name).astype(float)
        meta = {"specs": [hf.spec.to_dict() for hf in self.terrain.fields], "sensor_head": int(self.sensor.head)}
        rngs = {"env": [rng_state(r) for r in self.rngs], "noise": [rng_state(r) for r in self.sensor.rngs]}
        return blocks, meta, rngs

    def load_state_dict(self, blocks: dict[str, np.ndarray], meta: dict, rngs: dict) -> None:
        def fill(target: np.ndarray, key: str) -> None:
            src = blocks[key]
            if src.shape != target.shape:
                raise ValueError(f"{key}: shape {src.shape} != {target.shape}")
            target[...] = src.astype(target.dtype)

        specs = [TerrainSpec.from_dict(d) for d in meta["specs"]]
        if len(specs) != self.n:
            raise ValueError("environment count mismatch")
        for e, spec in enumerate(specs):
            self.terrain.replace(e, generate_heightfield(spec, self.cfg.terrain, strict=self.strict_terrain))
        for name, arr in self.state.arrays().items():
            fill(arr, f"state/{name}")
        for name, arr in self.dp.arrays().items():
            fill(arr, f"dp/{name}")
        for name in ("vx", "vy", "yaw_rate", "heading"):
            fill(getattr(self.cmd, name), f"cmd/{name}")
        for name in self._SCALARS:
            fill(getattr(self, name), name)
        for name in self._SENSOR:
            fill(getattr(self.sensor, name), f"sensor/{name}")
        self.sensor.head = int(meta["sensor_head"])
        self.rngs[:] = [restore_rng(s) for s in rngs["env"]]
        self.sensor.rngs[:] = [restore_rng(s) for s in rngs["noise"]]
