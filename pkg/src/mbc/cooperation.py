"""Familiarity gating, the cooperation penalty and privileged-latent estimation."""

from __future__ import annotations

import warnings

import numpy as np

from .config import HeightmapNoiseConfig, PerceptionConfig, RunConfig
from .env import N_JOINTS
from .nn import Mlp, Vae
from .perception import corrupt_grid, lattice_world
from .terrain import Kind, Phase, generate_heightfield, height_at, make_spec, sample_terrain_spec

STAGE1, STAGE2 = 1, 2


# -- regularizer --------------------------------------------------------------

def reconstruction_error(vae: Vae, h: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
    """Per-map mean squared residual of the deterministic reconstruction."""
    h = np.asarray(h, dtype=float)
    flat = h.reshape(h.shape[0], -1)
    if flat.shape[1] != vae.n_in:
        raise ValueError(f"map has {flat.shape[1]} cells, VAE expects {vae.n_in}")
    recon = vae.reconstruct(flat, params)
    return np.mean((recon - flat) ** 2, axis=1)


def penalty_indicator(errors, tau: float) -> np.ndarray:
    """1 where the map is familiar (error at or below tau), else 0."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return (np.asarray(errors, dtype=float) <= tau).astype(float)


def cooperation_penalty(actions: np.ndarray, indicators: np.ndarray) -> tuple[float, np.ndarray]:
    """P = (1/m) sum_i I_i sum_j a_ij^2 and its gradient w.r.t. the actions."""
    a = np.asarray(actions, dtype=float)
    I = np.asarray(indicators, dtype=float)
    if a.ndim != 2 or a.shape[0] != I.shape[0]:
        raise ValueError("actions must be (m, k) with one indicator per row")
    m = a.shape[0]
    P = float(np.sum(I * np.sum(a ** 2, axis=1)) / m)
    return P, 2.0 * I[:, None] * a / m


def percep_total_loss(surrogate: float, value_loss: float, entropy: float, penalty: float,
                      value_coef: float = 1.0, entropy_coef: float = 0.01, action_coef: float = 0.01) -> float:
    return surrogate + value_coef * value_loss - entropy_coef * entropy + action_coef * penalty


def penalty_extra(indicators: np.ndarray, coef: float):
    """Actor-loss hook adding ``coef * P`` on the policy mean of each minibatch."""
    def extra(idx: np.ndarray, mean: np.ndarray):
        P, g = cooperation_penalty(mean, indicators[idx])
        return coef * P, coef * g
    return extra


def combine_actions(a_blind: np.ndarray, a_percep: np.ndarray, stage: int) -> np.ndarray:
    a_blind = np.asarray(a_blind, dtype=float)
    a_percep = np.asarray(a_percep, dtype=float)
    if a_blind.shape != a_percep.shape or a_blind.shape[-1] != N_JOINTS:
        raise ValueError(f"actions must both be (..., {N_JOINTS}); got {a_blind.shape} and {a_percep.shape}")
    if stage == STAGE1:
        return a_blind.copy()
    if stage == STAGE2:
        return a_blind + a_percep
    raise ValueError(f"unknown stage {stage}")


# -- privileged latent estimation ---------------------------------------------

class PrivEncoderInput:
    """Feeds fresh privileged-encoder latents into the blind actor during PPO."""

    def __init__(self, net: Mlp, priv: np.ndarray):
        self.net = net
        self.priv = priv

    @property
    def n_params(self) -> int:
        return self.net.n_params

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @params.setter
    def params(self, value: np.ndarray) -> None:
        self.net.params = value

    def encode(self, idx, params):
        return self.net.forward(self.priv[idx], params)

    def encode_backward(self, cache, grad_out):
        return self.net.backward(cache, grad_out)[0]


def pad_window(window: np.ndarray, length: int) -> np.ndarray:
    """Left-pad (m, k, d) windows with zeros to ``length`` steps (or keep the last ``length``)."""
    window = np.asarray(window, dtype=float)
    k = window.shape[1]
    if k >= length:
        return window[:, k - length:]
    pad = np.zeros((window.shape[0], length - k, window.shape[2]))
    return np.concatenate([pad, window], axis=1)


def roa_latent_loss(history_enc: Mlp, priv_enc: Mlp, window: np.ndarray, v_true: np.ndarray,
                    priv: np.ndarray, history_len: int = 20, sym_weight: float = 0.1,
                    p_hist: np.ndarray | None = None, p_priv: np.ndarray | None = None):
    """Two-sided latent regression between the history and privileged encoders.

    loss = MSE(v_hat, v) + MSE(e_hat, sg(e)) + sym_weight * MSE(e, sg(e_hat)).
    Returns (loss, grads for history encoder, grads for privileged encoder).
    """
    w = pad_window(window, history_len)
    m = w.shape[0]
    out, h_cache = history_enc.forward(w.reshape(m, -1), p_hist)
    e, p_cache = priv_enc.forward(priv, p_priv)
    L = e.shape[1]
    v_hat, e_hat = out[:, :3], out[:, 3:]
    if e_hat.shape[1] != L:
        raise ValueError("history encoder output does not match the latent size")
    dv = v_hat - v_true
    de = e_hat - e
    loss = np.mean(dv ** 2) + np.mean(de ** 2) + sym_weight * np.mean(de ** 2)
    g_out = np.concatenate([2 * dv / dv.size, 2 * de / de.size], axis=1)
    g_hist, _ = history_enc.backward(h_cache, g_out)
    g_priv, _ = priv_enc.backward(p_cache, sym_weight * (-2 * de / de.size))
    return float(loss), g_hist, g_priv


def roa_objectives(history_enc: Mlp, priv_enc: Mlp, window, v_true, priv, p_hist, p_priv,
                   history_len: int = 20, sym_weight: float = 0.1) -> tuple[float, float]:
    """The objectives each encoder actually descends once stop-gradients are applied."""
    w = pad_window(window, history_len)
    out = history_enc.forward(w.reshape(w.shape[0], -1), p_hist)[0]
    e = priv_enc.forward(priv, p_priv)[0]
    e_fixed = priv_enc(priv)
    e_hat_fixed = history_enc(w.reshape(w.shape[0], -1))[:, 3:]
    f_hist = np.mean((out[:, :3] - v_true) ** 2) + np.mean((out[:, 3:] - e_fixed) ** 2)
    f_priv = sym_weight * np.mean((e - e_hat_fixed) ** 2)
    return float(f_hist), float(f_priv)


# -- calibration --------------------------------------------------------------

def calibrate_tau(vae: Vae, patches: np.ndarray, typical: float | None = None) -> float:
    """Maximum reconstruction error over the calibration patches."""
    errors = reconstruction_error(vae, patches)
    tau = float(np.max(errors))
    if typical is not None and tau > 10.0 * typical:
        warnings.warn(f"calibration error {tau:.4g} is over 10x the typical {typical:.4g}; VAE may be untrained",
                      RuntimeWarning, stacklevel=2)
    return tau


def view_patch(cfg: RunConfig, hf, rng: np.random.Generator, noisy: bool = True) -> np.ndarray:
    """One map from a random standing pose whose footprint overlaps the terrain feature."""
    pc: PerceptionConfig = cfg.perception
    nc: HeightmapNoiseConfig = cfg.heightmap_noise
    back = (pc.rows - int(round(pc.rows * pc.forward_fraction))) * pc.resolution
    ahead = pc.rows * pc.resolution - back
    lo, hi = hf.feature_span
    hi = max(hi, lo + 0.1)
    x = float(rng.uniform(lo - ahead, min(hi + back, cfg.terrain.length - ahead)))
    y = float(rng.uniform(-0.5, 0.5))
    yaw = float(rng.normal(0.0, 0.1))
    z = height_at(hf, x, y) + cfg.env.nominal_height
    wx, wy = lattice_world(pc, x, y, np.float64(yaw))
    grid = height_at(hf, wx, wy) - z
    if noisy and nc.enabled:
        grid, _ = corrupt_grid(grid, nc, rng)
    return grid


def _draw_spec(cfg: RunConfig, rng, phase, kinds, difficulty):
    d = float(rng.uniform(*difficulty))
    if kinds is not None:
        return make_spec(kinds[int(rng.integers(len(kinds)))], d, int(rng.integers(0, 2**63 - 1)))
    return sample_terrain_spec(phase, d, rng, cfg.terrain)


def sample_patches(cfg: RunConfig, n: int, rng: np.random.Generator, phase: Phase | str | None = Phase.STAGE1,
                   kinds: tuple[Kind, ...] | None = None, noisy: bool = True,
                   difficulty: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """``n`` maps, each on a freshly drawn terrain from a phase mix or from ``kinds``.

    Returns (n, rows, cols).
    """
    out = np.empty((n, cfg.perception.rows, cfg.perception.cols))
    for k in range(n):
        hf = generate_heightfield(_draw_spec(cfg, rng, phase, kinds, difficulty), cfg.terrain)
        out[k] = view_patch(cfg, hf, rng, noisy)
    return out


class PatchPool:
    """Random-pose maps over a fixed set of terrains (cheap VAE training data)."""

    def __init__(self, cfg: RunConfig, n_fields: int, rng: np.random.Generator,
                 phase: Phase | str = Phase.STAGE1):
        self.cfg = cfg
        self.fields = [generate_heightfield(_draw_spec(cfg, rng, phase, None, (0.0, 1.0)), cfg.terrain)
                       for _ in range(n_fields)]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n, self.cfg.perception.rows, self.cfg.perception.cols))
        for k in range(n):
            out[k] = view_patch(self.cfg, self.fields[int(rng.integers(len(self.fields)))], rng)
        return out
