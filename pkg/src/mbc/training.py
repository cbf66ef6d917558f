"""Stage 1 (blind pretraining + VAE + latent estimation) and stage 2 (two-agent) loops."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cooperation as coop
from .config import RunConfig
from .env import N_JOINTS, OBS_DIM, PRIV_DIM, SimulationError, assemble_observations
from .metrics import log_metrics
from .nn import AdamState, Mlp, Vae, adam_update, vae_step
from .persistence import Bundle, load_checkpoint, restore_rng, rng_state, save_checkpoint, validate_schema
from .rl import Agent, Learner, TrainingError, compute_gae, make_batch, mappo_update, ppo_update
from .terrain import FAMILIAR_KINDS, Phase
from .vecenv import VecEnv, phase_sampler

RNG_KEYS = ("init", "blind_act", "percep_act", "blind_ppo", "percep_ppo", "vae", "patches", "roa")
CALIBRATION_STREAM, HELDOUT_STREAM, POOL_STREAM = 900, 901, 902


def stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def obs_dims(cfg: RunConfig) -> dict[str, int]:
    n_map = cfg.perception.rows * cfg.perception.cols
    L = cfg.net.latent_dim
    return {
        "blind": OBS_DIM + 3 + L + N_JOINTS,
        "percep": OBS_DIM + n_map + N_JOINTS,
        "critic": OBS_DIM + 3 + L + n_map + 2 * N_JOINTS,
        "map": n_map,
        "latent": L,
        "window": cfg.net.history_len * OBS_DIM,
    }


def latent_slice(cfg: RunConfig) -> slice:
    start = OBS_DIM + 3
    return slice(start, start + cfg.net.latent_dim)


@dataclass
class Nets:
    blind: Agent
    priv_enc: Mlp
    hist_enc: Mlp
    vae: Vae
    percep: Agent | None = None


def build_nets(cfg: RunConfig, rng: np.random.Generator, with_percep: bool) -> Nets:
    d = obs_dims(cfg)
    net = cfg.net
    blind = Agent(d["blind"], d["critic"], N_JOINTS, net.actor_hidden, net.critic_hidden, net.activation,
                  net.init_log_std, rng)
    priv_enc = Mlp((PRIV_DIM, *net.priv_encoder_hidden, d["latent"]), net.activation, rng=rng)
    hist_enc = Mlp((d["window"], *net.history_encoder_hidden, 3 + d["latent"]), net.activation, rng=rng)
    vae = Vae(d["map"], net.vae_hidden, net.vae_latent, net.activation, rng)
    percep = None
    if with_percep:
        s2 = cfg.stage2
        percep = Agent(d["percep"], d["critic"], N_JOINTS, net.actor_hidden, net.critic_hidden, net.activation,
                       s2.percep_init_log_std, rng, actor_out_gain=s2.percep_out_gain)
    return Nets(blind, priv_enc, hist_enc, vae, percep)


def agent_blocks(prefix: str, agent: Agent) -> dict[str, np.ndarray]:
    return {f"{prefix}/actor": agent.actor.params.copy(), f"{prefix}/log_std": agent.log_std.copy(),
            f"{prefix}/critic": agent.critic.params.copy()}


def load_agent(bundle: Bundle, prefix: str, agent: Agent) -> None:
    agent.actor.params = bundle.block(f"{prefix}/actor", (agent.actor.n_params,)).copy()
    agent.log_std = bundle.block(f"{prefix}/log_std", (agent.act_dim,)).copy()
    agent.critic.params = bundle.block(f"{prefix}/critic", (agent.critic.n_params,)).copy()


def model_blocks(nets: Nets) -> dict[str, np.ndarray]:
    blocks = agent_blocks("blind", nets.blind)
    if nets.percep is not None:
        blocks.update(agent_blocks("percep", nets.percep))
    blocks["priv_encoder"] = nets.priv_enc.params.copy()
    blocks["history_encoder"] = nets.hist_enc.params.copy()
    blocks["vae"] = nets.vae.params.copy()
    return blocks


def load_models(bundle: Bundle, nets: Nets, with_percep: bool) -> None:
    load_agent(bundle, "blind", nets.blind)
    if with_percep and nets.percep is not None:
        load_agent(bundle, "percep", nets.percep)
    nets.priv_enc.params = bundle.block("priv_encoder", (nets.priv_enc.n_params,)).copy()
    nets.hist_enc.params = bundle.block("history_encoder", (nets.hist_enc.n_params,)).copy()
    nets.vae.params = bundle.block("vae", (nets.vae.n_params,)).copy()


# -- deployment policy ----------------------------------------------------------

class Policy:
    """Deterministic deployment controller: no privileged inputs, latents from history."""

    def __init__(self, cfg: RunConfig, nets: Nets):
        self.cfg = cfg
        self.nets = nets

    @property
    def has_percep(self) -> bool:
        return self.nets.percep is not None

    def observe(self, env: VecEnv, a_blind_prev, a_percep_prev, hmap=None):
        out = self.nets.hist_enc(env.history.reshape(env.n, -1))
        v_hat, e_hat = out[:, :3], out[:, 3:]
        hmap = env.hmap if hmap is None else hmap
        return assemble_observations(env.o, v_hat, e_hat, v_hat, e_hat, hmap, a_blind_prev, a_percep_prev)

    def act(self, env: VecEnv, a_blind_prev, a_percep_prev):
        """Returns (a_blind, a_percep, hmap the perceptive actor saw)."""
        hmap = env.hmap
        _, s_blind, s_percep, _ = self.observe(env, a_blind_prev, a_percep_prev, hmap)
        a_blind = self.nets.blind.actor(s_blind)
        if self.nets.percep is None:
            return a_blind, np.zeros_like(a_blind), hmap
        a_percep = self.nets.percep.actor(s_percep)
        if not (np.all(np.isfinite(a_blind)) and np.all(np.isfinite(a_percep))):
            raise SimulationError("policy produced non-finite actions")
        return a_blind, a_percep, hmap


def load_policy(path: str | Path, cfg: RunConfig | None = None) -> tuple[Policy, Bundle]:
    bundle = load_checkpoint(path)
    validate_schema(bundle)
    if cfg is None:
        cfg = RunConfig.from_dict(json.loads(bundle.config_text))
    with_percep = bundle.kind == "stage2"
    nets = build_nets(cfg, np.random.default_rng(0), with_percep)
    load_models(bundle, nets, with_percep)
    return Policy(cfg, nets), bundle


# -- trainer ----------------------------------------------------------------------

class Trainer:
    """One training stage as a resumable state machine.

    ``stage`` 1 trains the blind agent, the latent encoders and the VAE.
    ``stage`` 2 adds the perceptive agent on top of a stage-1 result with
    the VAE frozen.
    """

    def __init__(self, cfg: RunConfig, stage: int, run_dir: str | Path | None = None,
                 stage1: Bundle | None = None, n_envs: int | None = None):
        if stage not in (coop.STAGE1, coop.STAGE2):
            raise ValueError(f"unknown stage {stage}")
        if stage == coop.STAGE2:
            if stage1 is None:
                raise TrainingError("stage 2 needs a stage-1 checkpoint")
            validate_schema(stage1, "stage1")
        self.cfg = cfg
        self.stage = stage
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        seed = cfg.seed
        self.rngs = {k: stream(seed + 7919 * (stage - 1), i) for i, k in enumerate(RNG_KEYS)}
        with_percep = stage == coop.STAGE2
        self.nets = build_nets(cfg, self.rngs["init"], with_percep)
        if stage1 is not None:
            load_models(stage1, self.nets, with_percep=False)
            self.tau = float(stage1.tau) if cfg.stage2.tau_override is None else float(cfg.stage2.tau_override)
        else:
            self.tau = None
        sc = cfg.stage1 if stage == coop.STAGE1 else cfg.stage2
        self.steps = sc.steps_per_rollout
        self.n = n_envs if n_envs is not None else cfg.env.n_envs
        phase = Phase.STAGE1 if stage == coop.STAGE1 else Phase.STAGE2
        self.env = VecEnv(cfg, self.n, phase_sampler(phase, cfg), seed=seed + 7919 * (stage - 1),
                          randomize_start=True)
        blind_ppo = cfg.stage1.ppo if stage == coop.STAGE1 else cfg.stage2.blind_ppo
        self.blind = Learner(self.nets.blind, blind_ppo, coop.PrivEncoderInput(self.nets.priv_enc, np.zeros((0, PRIV_DIM))),
                             latent_slice(cfg))
        self.percep = Learner(self.nets.percep, cfg.stage2.percep_ppo) if with_percep else None
        self.opt_roa_hist = AdamState.zeros(self.nets.hist_enc.n_params)
        self.opt_roa_priv = AdamState.zeros(self.nets.priv_enc.n_params)
        self.opt_vae = AdamState.zeros(self.nets.vae.n_params)
        self.a_blind_prev = np.zeros((self.n, N_JOINTS))
        self.a_percep_prev = np.zeros((self.n, N_JOINTS))
        self.iteration = 0
        self.global_step = 0
        self.t0 = time.perf_counter()
        self.history: list[dict] = []
        self.vae_frozen = self.nets.vae.params.copy() if stage == coop.STAGE2 else None
        self._heldout = None
        self._calib = None
        self._pool = None

    # -- fixed evaluation sets (derived from the seed, not the trainer streams) --

    @property
    def heldout_patches(self) -> np.ndarray:
        if self._heldout is None:
            self._heldout = coop.sample_patches(self.cfg, 256, stream(self.cfg.seed, HELDOUT_STREAM))
        return self._heldout

    @property
    def calibration_patches(self) -> np.ndarray:
        if self._calib is None:
            self._calib = coop.sample_patches(self.cfg, self.cfg.stage1.calibration_patches,
                                              stream(self.cfg.seed, CALIBRATION_STREAM))
        return self._calib

    @property
    def pool(self) -> coop.PatchPool:
        if self._pool is None:
            self._pool = coop.PatchPool(self.cfg, self.cfg.stage1.vae_pool_fields,
                                        stream(self.cfg.seed, POOL_STREAM))
        return self._pool

    # -- rollout --------------------------------------------------------------

    def _observe(self):
        env, nets = self.env, self.nets
        out = nets.hist_enc(env.history.reshape(self.n, -1))
        v_hat, e_hat = out[:, :3], out[:, 3:]
        e_priv = nets.priv_enc(env.priv)
        use_priv = self.global_step % self.cfg.stage1.history_encoder_every != 0
        hmap = env.hmap
        a_p_prev = self.a_percep_prev if self.stage == coop.STAGE2 else np.zeros_like(self.a_percep_prev)
        o, s_b, s_p, s_c = assemble_observations(env.o, v_hat, e_priv if use_priv else e_hat, env.v_body,
                                                 e_priv, hmap, self.a_blind_prev, a_p_prev)
        return s_b, s_p, s_c, hmap, use_priv

    def collect(self) -> dict[str, np.ndarray]:
        """Roll every env forward ``steps`` control steps and store the batch time-major."""
        T, n = self.steps, self.n
        env, nets = self.env, self.nets
        keys = ("s_blind", "s_percep", "s_critic", "a_blind", "mu_blind", "logp_blind", "v_blind",
                "a_percep", "mu_percep", "logp_percep", "v_percep", "reward", "done", "hmap", "priv",
                "window", "v_true", "use_priv", "familiar")
        buf: dict[str, list] = {k: [] for k in keys}
        env.log.clear()
        for _ in range(T):
            s_b, s_p, s_c, hmap, use_priv = self._observe()
            a_b, mu_b, logp_b = nets.blind.act(s_b, self.rngs["blind_act"])
            v_b = nets.blind.value(s_c)
            if self.stage == coop.STAGE2:
                a_p, mu_p, logp_p = nets.percep.act(s_p, self.rngs["percep_act"])
                v_p = nets.percep.value(s_c)
            else:
                a_p = mu_p = np.zeros_like(a_b)
                logp_p = v_p = np.zeros(n)
            a = coop.combine_actions(a_b, a_p, self.stage)
            if not np.all(np.isfinite(a)):
                self._abort("non-finite action during rollout")
            buf["window"].append(env.history.copy())
            buf["v_true"].append(env.v_body.copy())
            buf["priv"].append(env.priv.copy())
            buf["familiar"].append(np.array([hf.spec.kind in FAMILIAR_KINDS for hf in env.terrain.fields]))
            reward, done, _ = env.step(a)
            for k, v in (("s_blind", s_b), ("s_percep", s_p), ("s_critic", s_c), ("a_blind", a_b),
                         ("mu_blind", mu_b), ("logp_blind", logp_b), ("v_blind", v_b), ("a_percep", a_p),
                         ("mu_percep", mu_p), ("logp_percep", logp_p), ("v_percep", v_p), ("reward", reward),
                         ("done", done), ("hmap", hmap), ("use_priv", np.full(n, use_priv))):
                buf[k].append(v)
            self.a_blind_prev = np.where(done[:, None], 0.0, a_b)
            self.a_percep_prev = np.where(done[:, None], 0.0, a_p)
            self.global_step += 1
        _, _, s_c, _, _ = self._observe()
        batch = {k: np.stack(v) for k, v in buf.items()}
        batch["last_v_blind"] = nets.blind.value(s_c)
        batch["last_v_percep"] = nets.percep.value(s_c) if self.stage == coop.STAGE2 else np.zeros(n)
        batch["episode_lengths"] = np.array(env.log.lengths, dtype=float)
        if not np.all(np.isfinite(batch["reward"])):
            self._abort("non-finite reward")
        return batch

    # -- updates --------------------------------------------------------------

    def _agent_batch(self, batch, who: str, agent: Agent):
        ppo = (self.blind if who == "blind" else self.percep).cfg
        adv, ret = compute_gae(batch["reward"], batch[f"v_{who}"], batch["done"], batch[f"last_v_{who}"],
                               ppo.gamma, ppo.gae_lambda)
        obs = batch["s_blind"] if who == "blind" else batch["s_percep"]
        return make_batch(obs, batch["s_critic"], batch[f"a_{who}"], batch[f"logp_{who}"], batch[f"mu_{who}"],
                          agent.log_std, batch[f"v_{who}"], adv, ret)

    def _roa_update(self, batch) -> float:
        cfg, nets = self.cfg, self.nets
        m = self.steps * self.n
        windows = batch["window"].reshape(m, cfg.net.history_len, OBS_DIM)
        v_true = batch["v_true"].reshape(m, 3)
        priv = batch["priv"].reshape(m, PRIV_DIM)
        rng = self.rngs["roa"]
        lr = cfg.stage1.roa_learning_rate
        losses = []
        for idx in np.array_split(rng.permutation(m), 4):
            loss, g_h, g_p = coop.roa_latent_loss(nets.hist_enc, nets.priv_enc, windows[idx], v_true[idx],
                                                  priv[idx], cfg.net.history_len, cfg.stage1.roa_symmetric_weight)
            if not np.isfinite(loss):
                self._abort("non-finite latent-estimation loss")
            nets.hist_enc.params = adam_update(nets.hist_enc.params, g_h, lr, self.opt_roa_hist)
            nets.priv_enc.params = adam_update(nets.priv_enc.params, g_p, lr, self.opt_roa_priv)
            losses.append(loss)
        return float(np.mean(losses))

    def _vae_update(self, batch) -> float:
        s1, nets = self.cfg.stage1, self.nets
        # the sensor holds each map for a whole refresh period; repeats add nothing
        stride = self.cfg.heightmap_noise.update_period_steps
        maps = batch["hmap"][::stride].reshape(-1, batch["hmap"][0, 0].size)
        extra = self.pool.sample(s1.vae_pool_patches, self.rngs["patches"]).reshape(s1.vae_pool_patches, -1)
        data = np.concatenate([maps, extra])
        rng = self.rngs["vae"]
        losses = []
        for _ in range(s1.vae_epochs):
            for idx in np.array_split(rng.permutation(len(data)), s1.vae_minibatches):
                _, _, _, loss, grads = vae_step(nets.vae, data[idx], rng, s1.vae_beta)
                if not np.isfinite(loss):
                    self._abort("non-finite VAE loss")
                nets.vae.params = adam_update(nets.vae.params, grads, s1.vae_learning_rate, self.opt_vae)
                losses.append(loss)
        return float(np.mean(losses))

    def run_iteration(self) -> dict:
        cfg, nets = self.cfg, self.nets
        batch = self.collect()
        T, n = self.steps, self.n
        m = T * n
        blind_b = self._agent_batch(batch, "blind", nets.blind)
        self.blind.encoder.priv = batch["priv"].reshape(m, PRIV_DIM)
        use_priv = batch["use_priv"].reshape(m)
        coef_b = cfg.stage1.action_penalty
        blind_extra = coop.penalty_extra(np.ones(m), coef_b) if coef_b > 0 else None
        dump = self.run_dir
        if self.stage == coop.STAGE2:
            errors = coop.reconstruction_error(nets.vae, batch["hmap"].reshape(m, -1))
            I = coop.penalty_indicator(errors, self.tau)
            lam = cfg.stage2.action_penalty
            percep_b = self._agent_batch(batch, "percep", nets.percep)
            percep_extra = coop.penalty_extra(I, lam) if lam > 0 else None
            s_b, s_p = mappo_update(self.blind, self.percep, blind_b, percep_b, self.rngs["blind_ppo"],
                                    self.rngs["percep_ppo"], blind_extra, percep_extra, use_priv, dump)
            mu_sq = np.sum(batch["mu_percep"].reshape(m, N_JOINTS) ** 2, axis=1)
            fam = batch["familiar"].reshape(m)
            P_i = I * mu_sq
            extra_rec = {"mean_P": float(P_i.mean()), "mean_I": float(I.mean()),
                         "familiar_P": float(P_i[fam].mean()) if fam.any() else float("nan")}
        else:
            s_b = ppo_update(self.blind, blind_b, self.rngs["blind_ppo"], blind_extra, use_priv, dump)
            s_p = None
            extra_rec = {}
        roa_loss = self._roa_update(batch)
        rec = {"iteration": self.iteration + 1}
        if self.stage == coop.STAGE1:
            rec["vae_loss"] = self._vae_update(batch)
            rec["heldout_recon"] = float(coop.reconstruction_error(nets.vae, self.heldout_patches).mean())
        rec["roa_loss"] = roa_loss
        rec["wall_seconds"] = time.perf_counter() - self.t0
        for prefix, st in (("blind", s_b), ("percep", s_p)):
            if st is None:
                continue
            rec[f"{prefix}_surrogate"] = st.mean("surrogate")
            rec[f"{prefix}_value_loss"] = st.mean("value_loss")
            rec[f"{prefix}_entropy"] = st.mean("entropy")
            rec[f"{prefix}_kl"] = st.mean("kl")
            rec[f"{prefix}_lr"] = st.lr[-1]
            rec[f"{prefix}_grad_norm"] = float(np.max(st.grad_norm))
        rec["mean_return"] = float(batch["reward"].mean())
        lens = batch["episode_lengths"]
        rec["mean_episode_length"] = float(lens.mean()) if len(lens) else float("nan")
        rec["mean_difficulty"] = float(self.env.difficulty.mean())
        rec.update(extra_rec)
        self.iteration += 1
        self.last_stats = (s_b, s_p)
        self.history.append(rec)
        if self.run_dir is not None:
            log_metrics(self.run_dir, rec)
        return rec

    def _abort(self, why: str):
        if self.run_dir is not None:
            try:
                save_checkpoint(self.state_bundle(calibrate=False), self.run_dir / "abort_state.ckpt")
            except Exception:  # the dump is best effort; the original error matters more
                pass
        raise TrainingError(f"{why} at iteration {self.iteration + 1}")

    def train(self, iterations: int | None = None, checkpoint_every: int | None = None, callback=None) -> Bundle:
        sc = self.cfg.stage1 if self.stage == coop.STAGE1 else self.cfg.stage2
        total = sc.iterations if iterations is None else iterations
        every = sc.checkpoint_every if checkpoint_every is None else checkpoint_every
        while self.iteration < total:
            rec = self.run_iteration()
            if callback is not None:
                callback(rec)
            if self.run_dir is not None and every and self.iteration % every == 0 and self.iteration < total:
                save_checkpoint(self.state_bundle(), self.run_dir / f"{self.kind}_iter{self.iteration:05d}.ckpt")
        bundle = self.state_bundle()
        if self.run_dir is not None:
            save_checkpoint(bundle, self.run_dir / f"{self.kind}.ckpt")
        return bundle

    # -- persistence ----------------------------------------------------------

    @property
    def kind(self) -> str:
        return "stage1" if self.stage == coop.STAGE1 else "stage2"

    def calibrate(self) -> float:
        return coop.calibrate_tau(self.nets.vae, self.calibration_patches)

    def state_bundle(self, calibrate: bool = True) -> Bundle:
        blocks = model_blocks(self.nets)
        opts = {"roa_hist": self.opt_roa_hist, "roa_priv": self.opt_roa_priv, "vae": self.opt_vae,
                "blind": self.blind.opt}
        if self.percep is not None:
            opts["percep"] = self.percep.opt
        counters = {"iteration": self.iteration, "global_step": self.global_step, "stage": self.stage}
        for name, st in opts.items():
            blocks[f"opt/{name}/m"] = st.m.copy()
            blocks[f"opt/{name}/v"] = st.v.copy()
            counters[f"opt/{name}/t"] = st.t
        blocks["a_blind_prev"] = self.a_blind_prev.copy()
        blocks["a_percep_prev"] = self.a_percep_prev.copy()
        env_blocks, env_meta, env_rngs = self.env.state_dict()
        blocks.update({f"env/{k}": v for k, v in env_blocks.items()})
        meta = {"env": env_meta, "lr": {"blind": self.blind.lr, "percep": self.percep.lr if self.percep else None},
                "n_envs": self.n}
        if self.stage == coop.STAGE1:
            tau = self.calibrate() if calibrate else None
        else:
            tau = self.tau
        rngs = {"trainer": {k: rng_state(r) for k, r in self.rngs.items()}, "env": env_rngs}
        return Bundle(self.kind, self.cfg.canonical_text(), blocks, tau, rngs, counters, meta)

    def load_state(self, bundle: Bundle) -> None:
        """Restore everything a bundle from ``state_bundle`` recorded (same config)."""
        if bundle.kind != self.kind:
            raise TrainingError(f"cannot resume a {self.kind} run from a {bundle.kind} checkpoint")
        if bundle.meta.get("n_envs") != self.n:
            raise TrainingError("checkpoint was written with a different environment count")
        load_models(bundle, self.nets, with_percep=self.percep is not None)
        opts = {"roa_hist": self.opt_roa_hist, "roa_priv": self.opt_roa_priv, "vae": self.opt_vae,
                "blind": self.blind.opt}
        if self.percep is not None:
            opts["percep"] = self.percep.opt
        for name, st in opts.items():
            st.m = bundle.block(f"opt/{name}/m", st.m.shape).copy()
            st.v = bundle.block(f"opt/{name}/v", st.v.shape).copy()
            st.t = bundle.counters[f"opt/{name}/t"]
        self.blind.lr = float(bundle.meta["lr"]["blind"])
        if self.percep is not None:
            self.percep.lr = float(bundle.meta["lr"]["percep"])
        self.a_blind_prev = bundle.block("a_blind_prev", self.a_blind_prev.shape).copy()
        self.a_percep_prev = bundle.block("a_percep_prev", self.a_percep_prev.shape).copy()
        self.iteration = bundle.counters["iteration"]
        self.global_step = bundle.counters["global_step"]
        env_blocks = {k[4:]: v for k, v in bundle.blocks.items() if k.startswith("env/")}
        self.env.load_state_dict(env_blocks, bundle.meta["env"], bundle.rng_states["env"])
        for k, state in bundle.rng_states["trainer"].items():
            self.rngs[k] = restore_rng(state)
        if self.stage == coop.STAGE2:
            self.tau = float(bundle.tau)
            self.vae_frozen = self.nets.vae.params.copy()

    @classmethod
    def resume(cls, cfg: RunConfig, bundle: Bundle, run_dir=None) -> "Trainer":
        stage = int(bundle.counters["stage"])
        stage1 = None
        if stage == coop.STAGE2:
            stage1 = Bundle("stage1", bundle.config_text, {k: v for k, v in bundle.blocks.items()
                                                           if not k.startswith("percep/")}, bundle.tau)
        trainer = cls(cfg, stage, run_dir, stage1=stage1, n_envs=int(bundle.meta["n_envs"]))
        trainer.load_state(bundle)
        return trainer


def train_stage1(cfg: RunConfig, run_dir=None, iterations: int | None = None, callback=None) -> Bundle:
    return Trainer(cfg, coop.STAGE1, run_dir).train(iterations, callback=callback)


def train_stage2(cfg: RunConfig, stage1: Bundle | str | Path, run_dir=None, iterations: int | None = None,
                 callback=None) -> Bundle:
    if not isinstance(stage1, Bundle):
        stage1 = load_checkpoint(stage1, "stage1")
    return Trainer(cfg, coop.STAGE2, run_dir, stage1=stage1).train(iterations, callback=callback)
