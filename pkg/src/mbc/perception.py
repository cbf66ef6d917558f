"""Robot-centric elevation maps, sensing noise, update delay and hot swap."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import HeightmapNoiseConfig, PerceptionConfig
from .terrain import Heightfield, TerrainStack, height_at


@dataclass
class ElevationMap:
    grid: np.ndarray  # (rows, cols), heights relative to base z
    resolution: float
    active: bool = True
    age_steps: int = 0

    @property
    def dims(self) -> tuple[int, int]:
        return self.grid.shape


def lattice_offsets(cfg: PerceptionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame (forward, lateral) sample offsets, each shaped (rows, cols)."""
    back = cfg.rows - int(round(cfg.rows * cfg.forward_fraction))
    fwd = (np.arange(cfg.rows) - back + 0.5) * cfg.resolution
    lat = (np.arange(cfg.cols) - cfg.cols / 2 + 0.5) * cfg.resolution
    return np.meshgrid(fwd, lat, indexing="ij")


def lattice_world(cfg: PerceptionConfig, x, y, yaw):
    """World sample points for base poses; leading axes follow ``x``."""
    f, l = lattice_offsets(cfg)
    x = np.asarray(x, dtype=float)[..., None, None]
    y = np.asarray(y, dtype=float)[..., None, None]
    c = np.cos(yaw)[..., None, None]
    s = np.sin(yaw)[..., None, None]
    return x + c * f - s * l, y + s * f + c * l


def extract_elevation_map(hf: Heightfield, base_pose, cfg: PerceptionConfig | None = None) -> ElevationMap:
    cfg = cfg or PerceptionConfig()
    x, y, z, yaw = base_pose
    wx, wy = lattice_world(cfg, x, y, np.float64(yaw))
    grid = height_at(hf, wx, wy) - z
    return ElevationMap(np.asarray(grid, dtype=float), cfg.resolution, True, 0)


def corrupt_grid(grid: np.ndarray, cfg: HeightmapNoiseConfig, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Apply one refresh worth of noise; returns (noisy grid, spike mask).

    Draw order is fixed (base offset, gaussian, spike mask, sign, magnitude)
    so a given stream always yields the same map.
    """
    shape = grid.shape
    offset = rng.uniform(*cfg.base_z_noise)
    lo, hi = cfg.gaussian_noise
    gauss = np.clip(rng.normal(0.0, cfg.gaussian_std, size=shape), lo, hi)
    spikes = rng.random(size=shape) < cfg.spike_proportion
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    mag = rng.uniform(*cfg.spike_magnitude, size=shape)
    noisy = grid + offset + gauss
    noisy = np.where(spikes, grid + offset + sign * mag, noisy)
    return noisy, spikes


def corrupt_elevation_map(emap: ElevationMap, cfg: HeightmapNoiseConfig,
                          rng: np.random.Generator) -> ElevationMap:
    if not emap.active:
        raise ValueError("cannot corrupt an inactive map")
    noisy, _ = corrupt_grid(emap.grid, cfg, rng)
    return replace(emap, grid=noisy)


def set_perception_active(emap: ElevationMap, active: bool) -> ElevationMap:
    if not active:
        return replace(emap, grid=np.zeros_like(emap.grid), active=False)
    return replace(emap, active=True)


class ElevationSensor:
    """Delayed, periodically refreshed, noisy maps for a batch of environments.

    A snapshot of the true geometry is pushed every control step; on a
    refresh tick the visible map becomes the corrupted snapshot from
    ``update_delay_steps`` steps earlier and is then held until the next tick.
    Each environment owns its noise stream.
    """

    def __init__(self, cfg: PerceptionConfig, noise: HeightmapNoiseConfig, n_envs: int,
                 rngs: list[np.random.Generator]):
        self.cfg = cfg
        self.noise = noise
        self.n_envs = n_envs
        self.rngs = rngs
        depth = noise.update_delay_steps + 1
        self.ring = np.zeros((depth, n_envs, cfg.rows, cfg.cols))
        self.visible = np.zeros((n_envs, cfg.rows, cfg.cols))
        self.active = np.ones(n_envs, dtype=bool)
        self.age = np.zeros(n_envs, dtype=np.int64)
        self.ticks = np.zeros(n_envs, dtype=np.int64)  # steps since reset
        self.head = 0

    def snapshot(self, terrain: TerrainStack, env_ids, x, y, z, yaw) -> np.ndarray:
        wx, wy = lattice_world(self.cfg, x, y, yaw)
        ids = np.asarray(env_ids)[:, None, None]
        return terrain.heights(ids, wx, wy) - np.asarray(z)[:, None, None]

    def _refresh(self, envs: np.ndarray, snaps: np.ndarray) -> None:
        for k, e in enumerate(envs):
            if not self.active[e]:
                continue
            if self.noise.enabled:
                self.visible[e], _ = corrupt_grid(snaps[k], self.noise, self.rngs[e])
            else:
                self.visible[e] = snaps[k]
            self.age[e] = 0

    def reset(self, envs: np.ndarray, snaps: np.ndarray) -> None:
        """Fill the delay line with the initial view and refresh at once."""
        self.ring[:, envs] = snaps[None]
        self.ticks[envs] = 0
        self.age[envs] = 0
        self.visible[envs] = 0.0
        self._refresh(envs, snaps)

    def push(self, snaps: np.ndarray) -> None:
        """Record this step's true views for all envs and refresh due envs."""
        depth = self.ring.shape[0]
        self.head = (self.head + 1) % depth
        self.ring[self.head] = snaps
        self.ticks += 1
        self.age += 1
        delayed = self.ring[(self.head + 1) % depth] if depth > 1 else self.ring[self.head]
        due = np.flatnonzero(self.ticks % self.noise.update_period_steps == 0)
        if due.size:
            # early ticks read the delay line, which reset() filled with the first view
            self._refresh(due, delayed[due])

    def set_active(self, envs, active: bool) -> None:
        envs = np.atleast_1d(np.asarray(envs))
        self.active[envs] = active
        if not active:
            self.visible[envs] = 0.0

    def observe(self) -> np.ndarray:
        out = self.visible.copy()
        out[~self.active] = 0.0
        return out
