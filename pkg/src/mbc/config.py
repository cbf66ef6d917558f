"""Run configuration: one dataclass per appendix table plus desk-scale knobs.

Every section is a plain dataclass. ``RunConfig.from_dict`` rejects unknown
keys, and ``canonical_text`` produces the sorted-key JSON embedded in
checkpoints and run manifests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class TerrainConfig:
    resolution: float = 0.05
    length: float = 24.0
    width: float = 4.0
    spawn_x: float = 2.0
    obstacle_x: float = 4.0  # start of the first feature, world x
    course_length: float = 20.0
    stair_width: float = 0.31
    stair_steps: int = 8  # steps per flight
    discrete_block_count: int = 40
    discrete_block_size: tuple[float, float] = (0.3, 0.8)
    gap_depth: float = 0.6
    pit_length: float = 1.5  # platform length along x
    pillar_height: float = 1.0
    stage1_proportions: dict[str, float] = field(
        default_factory=lambda: {"slope": 0.3, "stairs": 0.6, "discrete": 0.1}
    )
    stage2_proportions: dict[str, float] = field(
        default_factory=lambda: {"slope": 0.1, "stairs": 0.6, "complex": 0.3}
    )


@dataclass
class PerceptionConfig:
    rows: int = 24  # along the heading
    cols: int = 16
    resolution: float = 0.10
    forward_fraction: float = 2.0 / 3.0


@dataclass
class HeightmapNoiseConfig:
    enabled: bool = True
    base_z_noise: tuple[float, float] = (-0.05, 0.05)
    gaussian_noise: tuple[float, float] = (-0.02, 0.02)
    gaussian_std: float = 0.01
    spike_proportion: float = 0.05
    spike_magnitude: tuple[float, float] = (0.1, 0.5)
    update_delay_steps: int = 5
    update_period_steps: int = 5

    def __post_init__(self) -> None:
        if not 0.0 <= self.spike_proportion <= 1.0:
            raise ConfigError("spike_proportion must lie in [0, 1]")
        for name in ("base_z_noise", "gaussian_noise", "spike_magnitude"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: range is not ordered")
        if self.update_delay_steps < 0 or self.update_period_steps < 1:
            raise ConfigError("bad heightmap update timing")


@dataclass
class DomainRandConfig:
    enabled: bool = True
    added_mass: tuple[float, float] = (0.0, 3.0)  # kg, additive
    default_mass: float = 15.0
    com_offset: tuple[float, float] = (-0.2, 0.2)  # multiples of com_scale
    com_scale: float = 0.1
    friction: tuple[float, float] = (0.6, 2.0)
    motor_strength: tuple[float, float] = (0.8, 1.2)
    kp_scale: tuple[float, float] = (0.8, 1.2)
    kd_scale: tuple[float, float] = (0.8, 1.2)
    init_joint_scale: tuple[float, float] = (0.5, 1.5)
    action_delay_substeps: tuple[int, int] = (0, 4)  # 0-20 ms at 200 Hz
    push_interval_s: float = 8.0
    push_velocity: tuple[float, float] = (0.0, 0.5)


@dataclass
class RewardConfig:
    lin_vel_tracking: float = 1.5
    ang_vel_tracking: float = 0.5
    lin_vel_z: float = -1.0
    ang_vel_xy: float = -0.1
    z_velocity: float = -1.0
    xy_velocity: float = -0.1
    orientation: float = -0.7
    dof_acc: float = -1.5e-7
    collision: float = -20.0
    action_rate: float = -0.11
    delta_torques: float = -1.0e-7
    torques: float = -1.0e-5
    hip_position: float = -0.8
    dof_error: float = -0.04
    feet_stumble: float = -2.0
    termination: float = -5.0
    dof_pos_limits: float = -13.0
    tracking_sigma: float = 0.25
    heading_gate: float = 0.6
    dedupe_table6: bool = False
    collision_depth_clamp: float = 0.1


@dataclass
class EnvConfig:
    n_envs: int = 64
    control_dt: float = 0.02
    substeps: int = 4
    episode_length: int = 1000
    kp: float = 400.0
    kd: float = 40.0
    joint_inertia: float = 1.0
    torque_limit: float = 80.0
    action_clip: float = 1.0
    action_scale: float = 0.25
    thigh_length: float = 0.21
    calf_length: float = 0.21
    hip_length: float = 0.08
    hip_x: float = 0.19
    hip_y: float = 0.05
    nominal_height: float = 0.42
    default_joint_angles: tuple[float, float, float] = (0.1, 0.8, -1.5)
    joint_lower: tuple[float, float, float] = (-0.8, -1.0, -2.7)
    joint_upper: tuple[float, float, float] = (0.8, 2.6, -0.8)
    contact_eps: float = 0.001
    height_time_constant: float = 0.05
    tilt_time_constant: float = 0.05
    track_width: float = 0.30
    head_probe_x: float = 0.30
    collision_margin: float = 0.05
    stumble_rise: float = 0.02
    gravity: float = 9.81
    slip_time_constant: float = 0.5
    command_vx: tuple[float, float] = (0.3, 1.0)
    heading_gain: float = 0.5
    max_yaw_command: float = 0.5
    dof_vel_obs_scale: float = 0.05
    fall_threshold: float = 1.3
    stuck_window: int = 150
    stuck_distance: float = 0.05
    terminate_on_collision: bool = True
    workers: int = 1


@dataclass
class NetConfig:
    actor_hidden: tuple[int, ...] = (64, 32)
    critic_hidden: tuple[int, ...] = (64, 32)
    priv_encoder_hidden: tuple[int, ...] = (32, 16)
    history_encoder_hidden: tuple[int, ...] = (64, 32)
    vae_hidden: int = 512
    vae_latent: int = 36
    latent_dim: int = 8
    activation: str = "elu"
    init_log_std: float = 0.0
    history_len: int = 20


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    learning_rate: float = 1e-3
    adaptive_lr: bool = True
    desired_kl: float = 0.01
    max_grad_norm: float = 1.0
    clip_value_loss: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.clip < 1.0:
            raise ConfigError("clip must lie in (0, 1)")
        for name in ("gamma", "gae_lambda", "epochs", "minibatches", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class Stage1Config:
    iterations: int = 300
    steps_per_rollout: int = 21
    ppo: PpoConfig = field(default_factory=PpoConfig)
    action_penalty: float = 0.1
    vae_learning_rate: float = 1e-4
    vae_beta: float = 1e-3
    vae_epochs: int = 2
    vae_minibatches: int = 4
    vae_pool_patches: int = 1024  # random-pose stage-1 maps added to each VAE pass
    vae_pool_fields: int = 128
    roa_learning_rate: float = 1e-3
    roa_symmetric_weight: float = 0.1
    history_encoder_every: int = 20
    calibration_patches: int = 2048
    checkpoint_every: int = 50


@dataclass
class Stage2Config:
    iterations: int = 100
    steps_per_rollout: int = 21
    blind_ppo: PpoConfig = field(
        default_factory=lambda: PpoConfig(learning_rate=1e-5, adaptive_lr=False)
    )
    percep_ppo: PpoConfig = field(
        default_factory=lambda: PpoConfig(learning_rate=1e-4, adaptive_lr=False)
    )
    action_penalty: float = 0.01  # lambda_a
    percep_init_log_std: float = -1.0
    percep_out_gain: float = 1.0
    tau_override: float | None = None  # fixed threshold in place of the calibrated one
    checkpoint_every: int = 25


@dataclass
class EvalConfig:
    trials: int = 100
    repeats: int = 4
    steps: int = 1000
    v_cmd: float = 1.0


SECTIONS = {
    "terrain": TerrainConfig,
    "perception": PerceptionConfig,
    "heightmap_noise": HeightmapNoiseConfig,
    "domain_rand": DomainRandConfig,
    "rewards": RewardConfig,
    "env": EnvConfig,
    "net": NetConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    heightmap_noise: HeightmapNoiseConfig = field(default_factory=HeightmapNoiseConfig)
    domain_rand: DomainRandConfig = field(default_factory=DomainRandConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "config")

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls: type, data: dict[str, Any], where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def desk_profile() -> RunConfig:
    """Desk-scale defaults (these are also the dataclass defaults)."""
    return RunConfig()


def full_profile() -> RunConfig:
    """Scale knobs at the values printed in the appendix tables."""
    cfg = RunConfig()
    cfg.env.n_envs = 4096
    cfg.net.actor_hidden = (512, 256, 128)
    cfg.net.critic_hidden = (512, 256, 128)
    cfg.net.priv_encoder_hidden = (256, 128)
    cfg.perception.rows = 60
    cfg.perception.cols = 60
    cfg.perception.resolution = 0.05
    cfg.perception.forward_fraction = 0.5
    return cfg


def load_config(path: str | Path | None, profile: str = "desk") -> RunConfig:
    """Read a YAML/JSON config file layered over the chosen profile."""
    base = full_profile() if profile == "full" else desk_profile()
    if path is None:
        return base
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    merged = _merge(base.to_dict(), data)
    return RunConfig.from_dict(merged)


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    if not isinstance(override, dict):
        raise ConfigError("config document must be a mapping")
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in (
            "stage1_proportions",
            "stage2_proportions",
        ):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out
