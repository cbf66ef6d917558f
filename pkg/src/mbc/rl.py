"""PPO core and the two-agent (centralized critic) update schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .config import PpoConfig
from .nn import (
    AdamState, Mlp, adam_update, clamp_log_std, gaussian_entropy, gaussian_log_prob,
    gaussian_log_prob_grads,
)


class TrainingError(RuntimeError):
    pass


# -- advantages ---------------------------------------------------------------

def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values: np.ndarray,
                gamma: float = 0.99, lam: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates for (T, N) rollouts.

    ``dones[t]`` marks that step t ended its episode: nothing after it is
    bootstrapped into step t. Returns raw (advantages, returns).
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards, dtype=float)
    running = np.zeros_like(last_values, dtype=float)
    next_values = last_values
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t].astype(float)
        delta = rewards[t] + gamma * next_values * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_values = values[t]
    return adv, adv + values


def normalize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (x - x.mean()) / (x.std() + eps)


# -- losses -------------------------------------------------------------------

@dataclass
class PpoTerms:
    surrogate: float
    value_loss: float
    entropy: float
    approx_kl: float
    g_logp: np.ndarray  # d surrogate / d new log-prob
    g_value: np.ndarray  # d value_loss / d new value


def ppo_losses(old_logp: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
               new_logp: np.ndarray, new_values: np.ndarray, entropy: np.ndarray,
               clip: float = 0.2, old_values: np.ndarray | None = None,
               clip_value_loss: bool = False) -> PpoTerms:
    """Clipped surrogate, value loss, mean entropy and approximate KL, with gradients."""
    m = len(old_logp)
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    surrogate = -np.mean(np.minimum(unclipped, clipped))
    # gradient flows only where the unclipped branch is the active minimum
    active = unclipped <= clipped
    g_logp = np.where(active, -advantages * ratio / m, 0.0)

    if clip_value_loss and old_values is not None:
        v_clip = old_values + np.clip(new_values - old_values, -clip, clip)
        l1 = (new_values - returns) ** 2
        l2 = (v_clip - returns) ** 2
        value_loss = np.mean(np.maximum(l1, l2))
        inside = np.abs(new_values - old_values) <= clip
        g_value = np.where(l1 >= l2, 2 * (new_values - returns), np.where(inside, 2 * (v_clip - returns), 0.0)) / m
    else:
        value_loss = np.mean((new_values - returns) ** 2)
        g_value = 2.0 * (new_values - returns) / m
    return PpoTerms(float(surrogate), float(value_loss), float(np.mean(entropy)),
                    float(np.mean(old_logp - new_logp)), g_logp, g_value)


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new) -> np.ndarray:
    """KL(old || new) per sample for diagonal Gaussians."""
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    return np.sum(log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5, axis=-1)


def kl_adaptive_lr(lr: float, observed_kl: float, desired_kl: float = 0.01,
                   lo: float = 1e-6, hi: float = 1e-2) -> float:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if observed_kl > 2.0 * desired_kl:
        lr = lr / 1.5
    elif observed_kl < desired_kl / 2.0:
        lr = lr * 1.5
    return float(min(max(lr, lo), hi))


# -- agents -------------------------------------------------------------------

class InputEncoder(Protocol):
    """A trainable block whose output fills a slice of the actor input."""

    n_params: int
    params: np.ndarray

    def encode(self, idx: np.ndarray, params: np.ndarray): ...

    def encode_backward(self, cache, grad_out: np.ndarray) -> np.ndarray: ...


class Agent:
    """Actor (mean net + state-independent log-std) and its own critic."""

    def __init__(self, obs_dim: int, critic_dim: int, act_dim: int, actor_hidden, critic_hidden,
                 activation: str = "elu", init_log_std: float = 0.0,
                 rng: np.random.Generator | None = None, actor_out_gain: float = 0.01):
        rng = rng or np.random.default_rng(0)
        self.actor = Mlp((obs_dim, *actor_hidden, act_dim), activation, rng=rng, out_gain=actor_out_gain)
        self.critic = Mlp((critic_dim, *critic_hidden, 1), activation, rng=rng, out_gain=1.0)
        self.log_std = np.full(act_dim, float(init_log_std))
        self.act_dim = act_dim

    @property
    def n_params(self) -> int:
        return self.actor.n_params + self.act_dim + self.critic.n_params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.actor.params, self.log_std, self.critic.params])

    def set_flat(self, flat: np.ndarray) -> None:
        a, k = self.actor.n_params, self.act_dim
        self.actor.params = flat[:a].copy()
        self.log_std = clamp_log_std(flat[a:a + k].copy())
        self.critic.params = flat[a + k:].copy()

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None, deterministic: bool = False):
        mean = self.actor(obs)
        log_std = np.broadcast_to(clamp_log_std(self.log_std), mean.shape)
        if deterministic:
            return mean, mean, gaussian_log_prob(mean, mean, log_std)
        action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return action, mean, gaussian_log_prob(action, mean, log_std)

    def value(self, critic_obs: np.ndarray) -> np.ndarray:
        return self.critic(critic_obs)[:, 0]


# -- update -------------------------------------------------------------------

# (minibatch indices, actor mean) -> (loss value, d loss / d mean)
ActorExtra = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


@dataclass
class UpdateStats:
    surrogate: list[float] = field(default_factory=list)
    value_loss: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    approx_kl: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    extra: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    clipped_grad_norm: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.surrogate)

    def mean(self, name: str) -> float:
        vals = getattr(self, name)
        return float(np.mean(vals)) if vals else float("nan")

    def as_dict(self) -> dict[str, list[float]]:
        return {k: list(v) for k, v in self.__dict__.items()}


@dataclass
class AgentBatch:
    """Flattened (T*N) samples for one agent."""

    obs: np.ndarray
    critic_obs: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    old_mu: np.ndarray
    old_log_std: np.ndarray
    old_values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)


class Learner:
    """Optimizer state and learning rate for one agent (+ optional input encoder)."""

    def __init__(self, agent: Agent, cfg: PpoConfig, encoder: InputEncoder | None = None,
                 encoder_slice: slice | None = None):
        self.agent = agent
        self.cfg = cfg
        self.encoder = encoder
        self.encoder_slice = encoder_slice
        n = agent.n_params + (encoder.n_params if encoder is not None else 0)
        self.opt = AdamState.zeros(n)
        self.lr = cfg.learning_rate

    def get_flat(self) -> np.ndarray:
        parts = [self.agent.get_flat()]
        if self.encoder is not None:
            parts.append(self.encoder.params)
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        n = self.agent.n_params
        self.agent.set_flat(flat[:n])
        if self.encoder is not None:
            self.encoder.params = flat[n:].copy()


def agent_loss_and_grads(learner: Learner, batch: AgentBatch, idx: np.ndarray, flat: np.ndarray,
                         extra: ActorExtra | None = None, encoder_mask: np.ndarray | None = None):
    """Total loss and its gradient w.r.t. ``flat`` on minibatch ``idx``."""
    agent, cfg = learner.agent, learner.cfg
    a_n, k = agent.actor.n_params, agent.act_dim
    p_actor = flat[:a_n]
    log_std_raw = flat[a_n:a_n + k]
    p_critic = flat[a_n + k:agent.n_params]
    obs = batch.obs[idx]
    enc_cache = None
    use_enc = learner.encoder is not None
    if use_enc:
        p_enc = flat[agent.n_params:]
        latent, enc_cache = learner.encoder.encode(idx, p_enc)
        sl = learner.encoder_slice
        mask = np.ones(len(idx), bool) if encoder_mask is None else encoder_mask[idx]
        obs = obs.copy()
        obs[mask, sl] = latent[mask]

    mean, a_cache = agent.actor.forward(obs, p_actor)
    log_std = clamp_log_std(log_std_raw)
    ls = np.broadcast_to(log_std, mean.shape)
    actions = batch.actions[idx]
    new_logp = gaussian_log_prob(actions, mean, ls)
    entropy = gaussian_entropy(ls)
    values, c_cache = agent.critic.forward(batch.critic_obs[idx], p_critic)
    values = values[:, 0]
    adv = batch.advantages[idx]
    terms = ppo_losses(batch.old_logp[idx], adv, batch.returns[idx], new_logp, values, entropy,
                       cfg.clip, batch.old_values[idx], cfg.clip_value_loss)
    m = len(idx)
    loss = terms.surrogate + cfg.value_coef * terms.value_loss - cfg.entropy_coef * terms.entropy

    d_mu, d_ls = gaussian_log_prob_grads(actions, mean, ls)
    g_mean = terms.g_logp[:, None] * d_mu
    in_range = ((log_std_raw > -4.0) & (log_std_raw < 1.0)).astype(float)
    g_log_std = (terms.g_logp[:, None] * d_ls).sum(0) - cfg.entropy_coef * np.ones(k)
    g_log_std = g_log_std * in_range
    extra_val = 0.0
    if extra is not None:
        extra_val, g_extra = extra(idx, mean)
        loss += extra_val
        g_mean = g_mean + g_extra
    gp_actor, g_obs = agent.actor.backward(a_cache, g_mean)
    gp_critic, _ = agent.critic.backward(c_cache, (cfg.value_coef * terms.g_value)[:, None])
    parts = [gp_actor, g_log_std, gp_critic]
    if use_enc:
        g_lat = np.zeros_like(latent)
        g_lat[mask] = g_obs[mask, learner.encoder_slice]
        parts.append(learner.encoder.encode_backward(enc_cache, g_lat))
    kl = float(np.mean(gaussian_kl(batch.old_mu[idx], batch.old_log_std[idx], mean, ls)))
    return loss, np.concatenate(parts), terms, kl, extra_val


def ppo_update(learner: Learner, batch: AgentBatch, rng: np.random.Generator,
               extra: ActorExtra | None = None, encoder_mask: np.ndarray | None = None,
               dump_dir: str | Path | None = None) -> UpdateStats:
    """``epochs`` x ``minibatches`` Adam steps on shuffled samples.

    The adaptive learning rate reacts once per epoch to the epoch's mean KL.
    """
    cfg = learner.cfg
    stats = UpdateStats()
    flat = learner.get_flat()
    B = len(batch)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(B)
        epoch_kl = []
        for idx in np.array_split(perm, cfg.minibatches):
            loss, grads, terms, kl, extra_val = agent_loss_and_grads(learner, batch, idx, flat, extra, encoder_mask)
            if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
                _dump(dump_dir, flat, grads, terms, loss)
                raise TrainingError(f"non-finite loss {loss} (surrogate={terms.surrogate}, "
                                    f"value={terms.value_loss}, kl={kl}) at epoch {epoch}")
            epoch_kl.append(kl)
            flat = adam_update(flat, grads, learner.lr, learner.opt, cfg.max_grad_norm)
            # keep log-std inside its clamp so the stored parameters stay meaningful
            a_n, k = learner.agent.actor.n_params, learner.agent.act_dim
            flat[a_n:a_n + k] = clamp_log_std(flat[a_n:a_n + k])
            gn = learner.opt.last_grad_norm
            stats.surrogate.append(terms.surrogate)
            stats.value_loss.append(terms.value_loss)
            stats.entropy.append(terms.entropy)
            stats.approx_kl.append(terms.approx_kl)
            stats.kl.append(kl)
            stats.extra.append(extra_val)
            stats.grad_norm.append(gn)
            stats.clipped_grad_norm.append(learner.opt.last_applied_norm)
            stats.lr.append(learner.lr)
        if cfg.adaptive_lr:
            learner.lr = kl_adaptive_lr(learner.lr, float(np.mean(epoch_kl)), cfg.desired_kl)
    learner.set_flat(flat)
    return stats


def _dump(dump_dir, flat, grads, terms, loss) -> None:
    if dump_dir is None:
        return
    path = Path(dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / "nan_dump.npz", params=flat, grads=grads, loss=np.array(loss),
             surrogate=np.array(terms.surrogate), value_loss=np.array(terms.value_loss))


def make_batch(obs, critic_obs, actions, logp, mu, log_std, values, advantages, returns,
               normalize_adv: bool = True) -> AgentBatch:
    """Flatten (T, N, ...) rollout arrays into an AgentBatch."""
    def flat(x):
        x = np.asarray(x)
        return x.reshape(x.shape[0] * x.shape[1], *x.shape[2:])
    adv = flat(advantages)
    if normalize_adv:
        adv = normalize(adv)
    mu_f = flat(mu)
    return AgentBatch(flat(obs), flat(critic_obs), flat(actions), flat(logp), mu_f,
                      np.broadcast_to(log_std, mu_f.shape).copy(), flat(values), adv, flat(returns))


def mappo_update(blind: Learner, percep: Learner, blind_batch: AgentBatch, percep_batch: AgentBatch,
                 blind_rng: np.random.Generator, percep_rng: np.random.Generator,
                 blind_extra: ActorExtra | None = None, percep_extra: ActorExtra | None = None,
                 blind_encoder_mask: np.ndarray | None = None,
                 dump_dir=None) -> tuple[UpdateStats, UpdateStats]:
    """Independent PPO passes for the two agents.

    Each agent has its own optimizer, shuffling stream and critic; nothing one
    agent computes enters the other's gradients.
    """
    s_blind = ppo_update(blind, blind_batch, blind_rng, blind_extra, blind_encoder_mask, dump_dir)
    s_percep = ppo_update(percep, percep_batch, percep_rng, percep_extra, None, dump_dir)
    return s_blind, s_percep
