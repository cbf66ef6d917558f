"""Small numpy networks with exact reverse-mode gradients.

Parameters live in flat float64 vectors so optimizers, checkpoints and the
finite-difference checker can treat every model the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG_2PI = np.log(2 * np.pi)
LOG_STD_MIN, LOG_STD_MAX = -4.0, 1.0


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(x > 0, 1.0, y + 1.0)
    return 1.0 - y ** 2


class Mlp:
    """Fully connected net; hidden layers use ``activation``, the output is linear."""

    def __init__(self, sizes, activation: str = "elu", params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, out_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.shapes = [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = self.init_params(rng, out_gain)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params

    def init_params(self, rng: np.random.Generator, out_gain: float = 1.0) -> np.ndarray:
        chunks = []
        last = len(self.shapes) - 1
        for i, (a, b) in enumerate(self.shapes):
            gain = out_gain if i == last else np.sqrt(2.0)
            chunks.append(rng.normal(0.0, gain / np.sqrt(a), size=a * b))
            chunks.append(np.zeros(b))
        return np.concatenate(chunks)

    def layers(self, params: np.ndarray | None = None):
        p = self.params if params is None else params
        off = 0
        out = []
        for a, b in self.shapes:
            W = p[off:off + a * b].reshape(a, b)
            off += a * b
            bias = p[off:off + b]
            off += b
            out.append((W, bias))
        return out

    def forward(self, x: np.ndarray, params: np.ndarray | None = None):
        """Returns (output, cache); ``x`` is (batch, in)."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        cache = [x]
        h = x
        layers = self.layers(params)
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            if i < len(layers) - 1:
                y = _act(self.activation, z)
                cache.append((z, y))
                h = y
            else:
                h = z
        return h, (cache, params)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of sum(upstream * output) w.r.t. (flat params, input)."""
        acts, params = cache
        layers = self.layers(params)
        grads = [None] * (2 * len(layers))
        g = np.asarray(upstream, dtype=np.float64)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            h_in = acts[0] if i == 0 else acts[i][1]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ W.T
            if i > 0:
                z, y = acts[i]
                g = g * _act_grad(self.activation, z, y)
        flat = np.concatenate([gr.ravel() for gr in grads])
        return flat, g

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activation, self.params.copy())


def mlp_eval_with_grads(net: Mlp, x: np.ndarray, upstream: np.ndarray, params: np.ndarray | None = None):
    out, cache = net.forward(x, params)
    gp, gx = net.backward(cache, upstream)
    return out, gp, gx


# -- diagonal Gaussian --------------------------------------------------------

def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def gaussian_log_prob(action, mean, log_std):
    std = np.exp(log_std)
    z = (action - mean) / std
    return -0.5 * np.sum(z ** 2, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std):
    log_std = np.asarray(log_std)
    return np.sum(log_std + 0.5 * (LOG_2PI + 1.0), axis=-1)


def gaussian_log_prob_grads(action, mean, log_std):
    """(d logp / d mean, d logp / d log_std), both shaped like ``mean``."""
    std = np.exp(log_std)
    z = (action - mean) / std
    return z / std, z ** 2 - 1.0


def gaussian_head(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator | None = None,
                  action: np.ndarray | None = None):
    """Sample (or score a given action); returns (action, log_prob, entropy)."""
    mean = np.asarray(mean, dtype=float)
    log_std = np.broadcast_to(np.asarray(log_std, dtype=float), mean.shape)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise ValueError("non-finite gaussian parameters")
    if action is None:
        if rng is None:
            raise ValueError("need an rng to sample")
        action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return action, gaussian_log_prob(action, mean, log_std), gaussian_entropy(log_std)


# -- VAE ----------------------------------------------------------------------

class Vae:
    """Map autoencoder: encoder -> (mu, logvar), decoder -> reconstruction."""

    def __init__(self, n_in: int, hidden: int, latent: int, activation: str = "elu",
                 rng: np.random.Generator | None = None, params: np.ndarray | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.hidden, self.latent = n_in, hidden, latent
        self.enc = Mlp((n_in, hidden, 2 * latent), activation, rng=rng, out_gain=0.1)
        self.dec = Mlp((latent, hidden, n_in), activation, rng=rng)
        self.n_params = self.enc.n_params + self.dec.n_params
        if params is not None:
            self.params = np.asarray(params, dtype=np.float64)
        else:
            self.params = np.concatenate([self.enc.params, self.dec.params])

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != (self.n_params,):
            raise ValueError("VAE parameter size mismatch")
        self._params = value
        self.enc.params = value[:self.enc.n_params]
        self.dec.params = value[self.enc.n_params:]

    def split(self, params: np.ndarray):
        return params[:self.enc.n_params], params[self.enc.n_params:]

    def encode(self, h: np.ndarray, params: np.ndarray | None = None):
        pe, _ = self.split(self.params if params is None else params)
        out, _ = self.enc.forward(h, pe)
        return out[:, :self.latent], out[:, self.latent:]

    def reconstruct(self, h: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Deterministic reconstruction through the latent mean."""
        p = self.params if params is None else params
        mu, _ = self.encode(h, p)
        _, pd = self.split(p)
        return self.dec.forward(mu, pd)[0]


def vae_step(vae: Vae, h: np.ndarray, rng: np.random.Generator | None = None, beta: float = 1e-3,
             eps: np.ndarray | None = None, params: np.ndarray | None = None):
    """Loss and gradients for one batch of flattened maps ``h`` (batch, n).

    loss = mean squared reconstruction error + beta * mean KL(q || N(0, I)).
    Returns (reconstruction, mu, logvar, loss, flat grads).
    """
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite map")
    p = vae.params if params is None else params
    pe, pd = vae.split(p)
    m, n = h.shape
    L = vae.latent
    enc_out, enc_cache = vae.enc.forward(h, pe)
    mu, logvar = enc_out[:, :L], enc_out[:, L:]
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.standard_normal(mu.shape)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    recon, dec_cache = vae.dec.forward(z, pd)
    diff = recon - h
    rec_loss = np.mean(diff ** 2)
    kl = -0.5 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar), axis=1)
    loss = rec_loss + beta * np.mean(kl)

    g_recon = 2.0 * diff / (m * n)
    gpd, gz = vae.dec.backward(dec_cache, g_recon)
    g_mu = gz + beta * mu / m
    g_logvar = gz * eps * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0) / m
    gpe, _ = vae.enc.backward(enc_cache, np.concatenate([g_mu, g_logvar], axis=1))
    return recon, mu, logvar, loss, np.concatenate([gpe, gpd])


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    last_grad_norm: float = 0.0
    last_applied_norm: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, 0.0, 0.0)


def clip_grad_norm(grads: np.ndarray, max_norm: float | None) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.sum(grads ** 2)))
    if max_norm is not None and norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads, norm


def adam_update(params: np.ndarray, grads: np.ndarray, lr: float, state: AdamState,
                max_grad_norm: float | None = 1.0, betas=(0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One Adam step after global-norm clipping; mutates ``state``, returns new params."""
    if grads.shape != params.shape:
        raise ValueError("gradient shape mismatch")
    g, norm = clip_grad_norm(grads, max_grad_norm)
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * g * g
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    state.last_grad_norm = norm
    state.last_applied_norm = float(np.sqrt(np.sum(g ** 2)))
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


# -- gradient checking --------------------------------------------------------

def finite_diff_check(f: Callable[[np.ndarray], float], params: np.ndarray, grads: np.ndarray,
                      h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max over coordinates of |analytic - central difference| / max(floor, |numeric|)."""
    params = np.asarray(params, dtype=np.float64)
    worst = 0.0
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up.flat[i] += h
        dn.flat[i] -= h
        num = (f(up) - f(dn)) / (2 * h)
        err = abs(grads.flat[i] - num) / max(floor, abs(num))
        worst = max(worst, err)
    return worst
