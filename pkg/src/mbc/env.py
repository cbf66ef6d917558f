"""Deterministic surrogate quadruped.

The dynamics are a kinematic stand-in for a physics engine: joints follow a
PD law with unit inertia, the body is carried by the stance feet
(treadmill model), height and tilt relax toward the stance footprint, and the
body topples when its centre of mass leaves the stance footprint.

All functions work on batches: every state array has a leading env axis.
Leg order is FL, FR, RL, RR; joints per leg are (hip roll, thigh, calf).
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .config import DomainRandConfig, EnvConfig, RewardConfig

N_LEGS = 4
N_JOINTS = 12
OBS_DIM = 45
LEG_X_SIGN = np.array([1.0, 1.0, -1.0, -1.0])
LEG_Y_SIGN = np.array([1.0, -1.0, 1.0, -1.0])
LEFT = np.array([True, False, True, False])


class Termination(enum.IntEnum):
    NONE = 0
    FALL_OVER = 1
    STUCK = 2
    COLLISION = 3
    TIMEOUT = 4


class SimulationError(RuntimeError):
    pass


class _Batch:
    """Helpers for dataclasses whose fields are arrays with a leading env axis."""

    def take(self, ids):
        return type(self)(**{f.name: getattr(self, f.name)[ids].copy() for f in dataclasses.fields(self)})

    def put(self, ids, other) -> None:
        for f in dataclasses.fields(self):
            getattr(self, f.name)[ids] = getattr(other, f.name)

    def copy(self):
        return type(self)(**{f.name: getattr(self, f.name).copy() for f in dataclasses.fields(self)})

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def __len__(self) -> int:
        return len(getattr(self, dataclasses.fields(self)[0].name))


@dataclass(eq=False)
class DomainParams(_Batch):
    added_mass: np.ndarray  # (N,) kg
    com: np.ndarray  # (N, 2) m
    friction: np.ndarray  # (N,)
    motor_strength: np.ndarray  # (N, 12)
    kp_scale: np.ndarray  # (N,)
    kd_scale: np.ndarray  # (N,)
    init_joint_scale: np.ndarray  # (N,)
    delay: np.ndarray  # (N,) substeps
    push_interval: np.ndarray  # (N,) control steps
    push_velocity: np.ndarray  # (N,) m/s, magnitude cap for pushes


PRIV_DIM = 19


@dataclass(eq=False)
class RobotState(_Batch):
    pos: np.ndarray  # (N, 3) world
    rpy: np.ndarray  # (N, 3)
    vel: np.ndarray  # (N, 3) world, mean over the last control step
    ang_vel: np.ndarray  # (N, 3) (roll, pitch, yaw) rates, mean over the step
    q: np.ndarray  # (N, 12)
    qd: np.ndarray  # (N, 12)
    tau: np.ndarray  # (N, 12)
    qdd: np.ndarray  # (N, 12) mean joint acceleration over the step
    feet: np.ndarray  # (N, 4, 3) world
    contact: np.ndarray  # (N, 4) bool
    last_action: np.ndarray  # (N, 12)
    last_target: np.ndarray  # (N, 12) joint targets of the previous step
    tilt_rate: np.ndarray  # (N, 2) instantaneous roll/pitch rate
    vz: np.ndarray  # (N,) instantaneous vertical velocity
    slip: np.ndarray  # (N, 2) world-frame disturbance velocity
    x_hist: np.ndarray  # (N, W+1) ring of base x for the stuck window
    step: np.ndarray  # (N,) int, episode clock (timeouts)
    age: np.ndarray  # (N,) int, control steps since the last reset


@dataclass
class Command:
    vx: np.ndarray
    vy: np.ndarray
    yaw_rate: np.ndarray
    heading: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.vx, self.vy, self.yaw_rate], axis=-1)


@dataclass
class Events:
    stumble: np.ndarray  # (N,) 0/1
    collision_depth: np.ndarray  # (N,) base + head penetration, m
    collision: np.ndarray  # (N,) bool
    terminated: np.ndarray  # (N,) bool, excludes timeouts


REWARD_TERMS = (
    "lin_vel_tracking", "ang_vel_tracking", "lin_vel_z", "ang_vel_xy", "z_velocity",
    "xy_velocity", "orientation", "dof_acc", "collision", "action_rate", "delta_torques",
    "torques", "hip_position", "dof_error", "feet_stumble", "termination", "dof_pos_limits",
)


@dataclass
class RewardBreakdown:
    terms: dict[str, np.ndarray]
    total: np.ndarray


# -- kinematics ---------------------------------------------------------------

def default_joint_positions(cfg: EnvConfig) -> np.ndarray:
    roll, thigh, calf = cfg.default_joint_angles
    return np.concatenate([[roll * LEG_Y_SIGN[k], thigh, calf] for k in range(N_LEGS)])


def joint_limits(cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    return np.tile(cfg.joint_lower, N_LEGS), np.tile(cfg.joint_upper, N_LEGS)


def leg_forward_kinematics(q_leg, l1: float = 0.21, l2: float = 0.21, l_hip: float = 0.08):
    """Foot offset of one leg in its hip frame.

    ``q_leg`` is (..., 3) = (hip roll, thigh, calf). Returns (..., 3) with
    forward x, lateral y and vertical z (negative below the hip).
    """
    q_leg = np.asarray(q_leg, dtype=float)
    if not np.all(np.isfinite(q_leg)):
        raise ValueError("non-finite joint positions")
    roll, th, kn = q_leg[..., 0], q_leg[..., 1], q_leg[..., 2]
    x = l1 * np.sin(th) + l2 * np.sin(th + kn)
    z = -(l1 * np.cos(th) + l2 * np.cos(th + kn))
    y = l_hip * np.sin(roll)
    return np.stack([x, y, z], axis=-1)


def _leg_velocity(q_leg, qd_leg, l1, l2, l_hip):
    roll, th, kn = q_leg[..., 0], q_leg[..., 1], q_leg[..., 2]
    droll, dth, dkn = qd_leg[..., 0], qd_leg[..., 1], qd_leg[..., 2]
    vx = l1 * np.cos(th) * dth + l2 * np.cos(th + kn) * (dth + dkn)
    vz = l1 * np.sin(th) * dth + l2 * np.sin(th + kn) * (dth + dkn)
    vy = l_hip * np.cos(roll) * droll
    return np.stack([vx, vy, vz], axis=-1)


def mount_height(cfg: EnvConfig) -> float:
    """Hip height below the base such that the default stance stands at nominal height."""
    fk = leg_forward_kinematics(default_joint_positions(cfg)[:3], cfg.thigh_length,
                                cfg.calf_length, cfg.hip_length)
    return -cfg.nominal_height - fk[2]


def feet_body(q: np.ndarray, qd: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame foot positions and velocities, each (N, 4, 3)."""
    ql = q.reshape(-1, N_LEGS, 3)
    qdl = qd.reshape(-1, N_LEGS, 3)
    fk = leg_forward_kinematics(ql, cfg.thigh_length, cfg.calf_length, cfg.hip_length)
    hip = np.stack([LEG_X_SIGN * cfg.hip_x, LEG_Y_SIGN * cfg.hip_y,
                    np.full(N_LEGS, mount_height(cfg))], axis=-1)
    pos = hip + fk
    vel = _leg_velocity(ql, qdl, cfg.thigh_length, cfg.calf_length, cfg.hip_length)
    return pos, vel


def rotation(rpy: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrices (N, 3, 3), z-y-x convention."""
    r, p, y = rpy[..., 0], rpy[..., 1], rpy[..., 2]
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    return np.stack([
        np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], -1),
        np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], -1),
        np.stack([-sp, cp * sr, cp * cr], -1),
    ], -2)


def projected_gravity(rpy: np.ndarray) -> np.ndarray:
    R = rotation(rpy)
    return np.einsum("nji,j->ni", R, np.array([0.0, 0.0, -1.0]))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


# -- domain randomization -----------------------------------------------------

def sample_domain_params(rng: np.random.Generator, cfg: DomainRandConfig | None = None,
                         env_cfg: EnvConfig | None = None) -> DomainParams:
    """One environment's physical parameters (batch of one)."""
    cfg = cfg or DomainRandConfig()
    env_cfg = env_cfg or EnvConfig()
    push_interval = int(round(cfg.push_interval_s / env_cfg.control_dt))
    if not cfg.enabled:
        return identity_domain_params(1, cfg, env_cfg)
    u = rng.uniform
    return DomainParams(
        added_mass=np.array([u(*cfg.added_mass)]),
        com=np.array([[u(*cfg.com_offset), u(*cfg.com_offset)]]) * cfg.com_scale,
        friction=np.array([u(*cfg.friction)]),
        motor_strength=u(*cfg.motor_strength, size=(1, N_JOINTS)),
        kp_scale=np.array([u(*cfg.kp_scale)]),
        kd_scale=np.array([u(*cfg.kd_scale)]),
        init_joint_scale=np.array([u(*cfg.init_joint_scale)]),
        delay=np.array([rng.integers(cfg.action_delay_substeps[0], cfg.action_delay_substeps[1] + 1)]),
        push_interval=np.array([push_interval]),
        push_velocity=np.array([u(*cfg.push_velocity)]),
    )


def identity_domain_params(n: int, cfg: DomainRandConfig | None = None,
                           env_cfg: EnvConfig | None = None) -> DomainParams:
    cfg = cfg or DomainRandConfig()
    env_cfg = env_cfg or EnvConfig()
    return DomainParams(
        added_mass=np.zeros(n), com=np.zeros((n, 2)), friction=np.ones(n),
        motor_strength=np.ones((n, N_JOINTS)), kp_scale=np.ones(n), kd_scale=np.ones(n),
        init_joint_scale=np.ones(n), delay=np.zeros(n, dtype=np.int64),
        push_interval=np.full(n, int(round(cfg.push_interval_s / env_cfg.control_dt))),
        push_velocity=np.zeros(n),
    )


def concat_params(items: list[DomainParams]) -> DomainParams:
    return DomainParams(**{f.name: np.concatenate([getattr(i, f.name) for i in items])
                           for f in dataclasses.fields(DomainParams)})


def _unit(x, lo, hi):
    span = hi - lo
    return np.where(span > 0, 2.0 * (x - lo) / np.where(span > 0, span, 1.0) - 1.0, 0.0)


def privileged_vector(dp: DomainParams, cfg: DomainRandConfig | None = None) -> np.ndarray:
    """Normalized physical parameters, roughly in [-1, 1]; (N, PRIV_DIM)."""
    cfg = cfg or DomainRandConfig()
    cols = [
        _unit(dp.added_mass, *cfg.added_mass)[:, None],
        _unit(dp.com, cfg.com_offset[0] * cfg.com_scale, cfg.com_offset[1] * cfg.com_scale),
        _unit(dp.friction, *cfg.friction)[:, None],
        _unit(dp.kp_scale, *cfg.kp_scale)[:, None],
        _unit(dp.kd_scale, *cfg.kd_scale)[:, None],
        _unit(dp.delay.astype(float), *cfg.action_delay_substeps)[:, None],
        _unit(dp.motor_strength, *cfg.motor_strength),
    ]
    return np.concatenate(cols, axis=1)


# -- reset / step -------------------------------------------------------------

def sample_command(rng: np.random.Generator, cfg: EnvConfig, heading: float = 0.0) -> tuple[float, float]:
    return float(rng.uniform(*cfg.command_vx)), heading


def heading_yaw_rate(heading, yaw, cfg: EnvConfig):
    return np.clip(cfg.heading_gain * wrap_angle(heading - yaw), -cfg.max_yaw_command, cfg.max_yaw_command)


def reset_state(terrain, env_ids: np.ndarray, spawn: np.ndarray, dp: DomainParams,
                cfg: EnvConfig) -> RobotState:
    """Robots standing on the terrain at their spawn poses with zero velocity.

    ``spawn`` is (n, 3) = (x, y, yaw).
    """
    n = len(env_ids)
    lo, hi = joint_limits(cfg)
    q = np.clip(default_joint_positions(cfg)[None] * dp.init_joint_scale[:, None], lo, hi)
    qd = np.zeros((n, N_JOINTS))
    rpy = np.zeros((n, 3))
    rpy[:, 2] = spawn[:, 2]
    fb, _ = feet_body(q, qd, cfg)
    R = rotation(rpy)
    offs = np.einsum("nij,nkj->nki", R, fb)
    fx = spawn[:, 0, None] + offs[..., 0]
    fy = spawn[:, 1, None] + offs[..., 1]
    ground = terrain.heights(env_ids[:, None], fx, fy)
    z = np.mean(ground - offs[..., 2], axis=1)
    pos = np.stack([spawn[:, 0], spawn[:, 1], z], axis=-1)
    feet = pos[:, None, :] + offs
    contact = feet[..., 2] <= ground + cfg.contact_eps
    return RobotState(
        pos=pos, rpy=rpy, vel=np.zeros((n, 3)), ang_vel=np.zeros((n, 3)), q=q, qd=qd,
        tau=np.zeros((n, N_JOINTS)), qdd=np.zeros((n, N_JOINTS)), feet=feet, contact=contact,
        last_action=np.zeros((n, N_JOINTS)), last_target=q.copy(), tilt_rate=np.zeros((n, 2)),
        vz=np.zeros(n), slip=np.zeros((n, 2)),
        x_hist=np.repeat(spawn[:, :1], cfg.stuck_window + 1, axis=1),
        step=np.zeros(n, dtype=np.int64),
        age=np.zeros(n, dtype=np.int64),
    )


def _plane_tilt(dx, dy, z, w):
    """Least-squares plane z = a + b dx + c dy through weighted points; returns (roll, pitch)."""
    A = np.stack([np.ones_like(dx), dx, dy], axis=-1)
    Aw = A * w[..., None]
    M = np.einsum("nki,nkj->nij", Aw, A) + 1e-6 * np.eye(3)
    rhs = np.einsum("nki,nk->ni", Aw, z)
    sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.arctan(sol[:, 2]), -np.arctan(sol[:, 1])


def physics_step(state: RobotState, action: np.ndarray, terrain, env_ids: np.ndarray,
                 dp: DomainParams, cfg: EnvConfig) -> tuple[RobotState, dict]:
    """Advance a batch by one control step (``cfg.substeps`` PD substeps).

    Pushes and rewards are handled by the caller; this is the deterministic core.
    """
    if not np.all(np.isfinite(action)):
        raise SimulationError("non-finite action")
    s = state.copy()
    n = len(s)
    dt = cfg.control_dt / cfg.substeps
    a = np.clip(action, -cfg.action_clip, cfg.action_clip)
    q_def = default_joint_positions(cfg)
    target = q_def + a * cfg.action_scale
    lo, hi = joint_limits(cfg)
    kp = cfg.kp * dp.kp_scale[:, None]
    kd = cfg.kd * dp.kd_scale[:, None]
    mass_factor = cfg_mass_factor(dp)
    tau_max = cfg.torque_limit * dp.motor_strength * mass_factor[:, None]
    fric = np.minimum(1.0, dp.friction)[:, None]
    ids = env_ids[:, None]
    lever2 = cfg.nominal_height ** 2
    qd_start = s.qd.copy()
    pos_start = s.pos.copy()
    rpy_start = s.rpy.copy()
    stumble = np.zeros(n, dtype=bool)
    feet_prev = s.feet
    contact_prev = s.contact
    tau_sum = np.zeros((n, N_JOINTS))

    for k in range(cfg.substeps):
        tgt = np.where((k < dp.delay)[:, None], s.last_target, target)
        tau = np.clip(kp * (tgt - s.q) - kd * s.qd, -tau_max, tau_max)
        s.qd = s.qd + dt * tau / cfg.joint_inertia
        q_new = s.q + dt * s.qd
        at_stop = (q_new < lo) | (q_new > hi)
        s.q = np.clip(q_new, lo, hi)
        s.qd = np.where(at_stop, 0.0, s.qd)
        tau_sum += tau
        s.tau = tau

        fb, fv = feet_body(s.q, s.qd, cfg)
        R = rotation(s.rpy)
        offs = np.einsum("nij,nkj->nki", R, fb)
        feet = s.pos[:, None, :] + offs
        ground = terrain.heights(ids, feet[..., 0], feet[..., 1])
        contact = feet[..., 2] <= ground + cfg.contact_eps

        # swing foot driven into a rise taller than its clearance
        g_prev = terrain.heights(ids, feet_prev[..., 0], feet_prev[..., 1])
        rise = ground - g_prev
        clearance = feet_prev[..., 2] - g_prev
        hit = (~contact_prev) & (rise > cfg.stumble_rise) & (rise > clearance)
        stumble |= hit.any(axis=1)

        n_st = contact.sum(axis=1)
        has = n_st > 0
        wst = contact.astype(float)
        denom = np.maximum(n_st, 1)[:, None]
        v_body = -(fv[..., :2] * wst[..., None]).sum(axis=1) / denom * fric
        left = (fv[..., 0] * wst * LEFT).sum(1) / np.maximum((wst * LEFT).sum(1), 1)
        right = (fv[..., 0] * wst * ~LEFT).sum(1) / np.maximum((wst * ~LEFT).sum(1), 1)
        both = ((wst * LEFT).sum(1) > 0) & ((wst * ~LEFT).sum(1) > 0)
        yaw_rate = np.where(both & has, (left - right) / cfg.track_width * fric[:, 0], 0.0)

        cy, sy = np.cos(s.rpy[:, 2]), np.sin(s.rpy[:, 2])
        vwx = cy * v_body[:, 0] - sy * v_body[:, 1]
        vwy = sy * v_body[:, 0] + cy * v_body[:, 1]
        s.slip = s.slip * np.exp(-dt / cfg.slip_time_constant)
        vx = np.where(has, vwx, s.vel[:, 0]) + s.slip[:, 0] * has
        vy = np.where(has, vwy, s.vel[:, 1]) + s.slip[:, 1] * has
        s.vel = np.stack([vx, vy, s.vel[:, 2]], axis=-1)

        # height: relax toward the stance footprint, else ballistic
        z_target = (((ground - offs[..., 2]) * wst).sum(axis=1)) / denom[:, 0]
        z_relaxed = s.pos[:, 2] + (z_target - s.pos[:, 2]) * (dt / cfg.height_time_constant)
        vz_ball = s.vz - cfg.gravity * dt
        z_ball = s.pos[:, 2] + vz_ball * dt
        z_new = np.where(has, z_relaxed, z_ball)
        s.vz = np.where(has, (z_new - s.pos[:, 2]) / dt, vz_ball)

        # tilt: topple about the footprint edge when the CoM overhangs it
        fx_b = cy[:, None] * offs[..., 0] + sy[:, None] * offs[..., 1]
        fy_b = -sy[:, None] * offs[..., 0] + cy[:, None] * offs[..., 1]
        big = 1e3
        max_x = np.where(contact, fx_b, -big).max(1)
        min_x = np.where(contact, fx_b, big).min(1)
        max_y = np.where(contact, fy_b, -big).max(1)
        min_y = np.where(contact, fy_b, big).min(1)
        ox = np.maximum(dp.com[:, 0] - max_x, 0.0) - np.maximum(min_x - dp.com[:, 0], 0.0)
        oy = np.maximum(dp.com[:, 1] - max_y, 0.0) - np.maximum(min_y - dp.com[:, 1], 0.0)
        ox = np.where(has, ox, 0.0)
        oy = np.where(has, oy, 0.0)
        roll_t, pitch_t = _plane_tilt(fx_b, fy_b, ground, wst)
        rel = dt / cfg.tilt_time_constant
        tipping = np.stack([oy != 0, ox != 0], axis=-1)
        acc = np.stack([-cfg.gravity * oy / (oy ** 2 + lever2), cfg.gravity * ox / (ox ** 2 + lever2)], -1)
        relax_rate = (np.stack([roll_t, pitch_t], -1) - s.rpy[:, :2]) * rel / dt
        rate = np.where(tipping, s.tilt_rate + acc * dt, relax_rate)
        rate = np.where(has[:, None], rate, s.tilt_rate)
        s.tilt_rate = rate

        s.pos = np.stack([s.pos[:, 0] + vx * dt, s.pos[:, 1] + vy * dt, z_new], axis=-1)
        s.rpy = s.rpy + np.concatenate([rate * dt, (yaw_rate * dt)[:, None]], axis=-1)

        feet_prev = feet
        contact_prev = contact

    fb, fv = feet_body(s.q, s.qd, cfg)
    R = rotation(s.rpy)
    offs = np.einsum("nij,nkj->nki", R, fb)
    s.feet = s.pos[:, None, :] + offs
    ground = terrain.heights(ids, s.feet[..., 0], s.feet[..., 1])
    s.contact = s.feet[..., 2] <= ground + cfg.contact_eps

    T = cfg.control_dt
    s.vel = (s.pos - pos_start) / T
    s.ang_vel = np.concatenate([(s.rpy[:, :2] - rpy_start[:, :2]) / T,
                                (wrap_angle(s.rpy[:, 2] - rpy_start[:, 2]) / T)[:, None]], axis=-1)
    s.qdd = (s.qd - qd_start) / T
    s.last_action = a
    s.last_target = target
    s.step = s.step + 1
    s.age = s.age + 1
    s.x_hist = np.concatenate([s.x_hist[:, 1:], s.pos[:, :1]], axis=1)

    # collision probes: base centre and a head point ahead of it
    head = s.pos + np.einsum("nij,j->ni", R, np.array([cfg.head_probe_x, 0.0, 0.0]))
    g_base = terrain.heights(env_ids, s.pos[:, 0], s.pos[:, 1])
    g_head = terrain.heights(env_ids, head[:, 0], head[:, 1])
    d_base = np.maximum(g_base + cfg.collision_margin - s.pos[:, 2], 0.0)
    d_head = np.maximum(g_head + cfg.collision_margin - head[:, 2], 0.0)

    for name, arr in s.arrays().items():
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise SimulationError(f"non-finite state field {name!r}")
    info = {
        "stumble": stumble.astype(float),
        "collision_depth": d_base + d_head,
        "collision": (d_base + d_head) > 0,
    }
    return s, info


def cfg_mass_factor(dp: DomainParams, default_mass: float = 15.0) -> np.ndarray:
    """Payload reduces the torque available for motion."""
    return default_mass / (default_mass + dp.added_mass)


def apply_push(state: RobotState, dv: np.ndarray) -> None:
    """Add a horizontal velocity kick (N, 2) in place."""
    state.vel[:, :2] += dv
    state.slip += dv


# -- rewards / termination ----------------------------------------------------

def compute_rewards(prev: RobotState, nxt: RobotState, a_t: np.ndarray, a_prev: np.ndarray,
                    tau_t: np.ndarray, tau_prev: np.ndarray, cmd: Command, events: Events,
                    cfg: RewardConfig, env_cfg: EnvConfig) -> RewardBreakdown:
    """Weighted per-term rewards; ``total`` is the sum of the terms."""
    yaw = nxt.rpy[:, 2]
    cy, sy = np.cos(yaw), np.sin(yaw)
    v_body = np.stack([cy * nxt.vel[:, 0] + sy * nxt.vel[:, 1], -sy * nxt.vel[:, 0] + cy * nxt.vel[:, 1]], -1)
    cmd_xy = np.stack([cmd.vx, cmd.vy], -1)
    gate = (np.abs(wrap_angle(cmd.heading - yaw)) <= cfg.heading_gate).astype(float)
    sigma = cfg.tracking_sigma
    lo, hi = joint_limits(env_cfg)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    soft_lo, soft_hi = mid - 0.9 * half, mid + 0.9 * half
    q_def = default_joint_positions(env_cfg)
    g = projected_gravity(nxt.rpy)
    dup = 0.0 if cfg.dedupe_table6 else 1.0
    vz2 = nxt.vel[:, 2] ** 2
    wxy2 = nxt.ang_vel[:, 0] ** 2 + nxt.ang_vel[:, 1] ** 2
    raw = {
        "lin_vel_tracking": gate * np.exp(-np.sum((cmd_xy - v_body) ** 2, -1) / (2 * sigma)),
        "ang_vel_tracking": gate * np.exp(-(cmd.yaw_rate - nxt.ang_vel[:, 2]) ** 2 / sigma),
        "lin_vel_z": vz2,
        "ang_vel_xy": wxy2,
        "z_velocity": vz2 * dup,
        "xy_velocity": wxy2 * dup,
        "orientation": np.sum(g[:, :2] ** 2, -1),
        "dof_acc": np.sum(nxt.qdd ** 2, -1),
        "collision": np.minimum(events.collision_depth, cfg.collision_depth_clamp),
        "action_rate": np.sum((a_t - a_prev) ** 2, -1),
        "delta_torques": np.sum((tau_t - tau_prev) ** 2, -1),
        "torques": np.sum(tau_t ** 2, -1),
        "hip_position": np.sum(nxt.q[:, 0::3] ** 2, -1),
        "dof_error": np.sum((nxt.q - q_def) ** 2, -1),
        "feet_stumble": events.stumble,
        "termination": events.terminated.astype(float),
        "dof_pos_limits": np.sum(np.maximum(soft_lo - nxt.q, 0) + np.maximum(nxt.q - soft_hi, 0), -1),
    }
    terms = {name: getattr(cfg, name) * raw[name] for name in REWARD_TERMS}
    total = np.zeros_like(terms[REWARD_TERMS[0]])
    for name in REWARD_TERMS:
        total = total + terms[name]
    return RewardBreakdown(terms, total)


def check_termination(state: RobotState, collision: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Termination code per env (see ``Termination``); first matching rule wins."""
    out = np.full(len(state), Termination.NONE, dtype=np.int64)
    timeout = state.step >= cfg.episode_length
    stuck = (state.age >= cfg.stuck_window) & \
        (state.x_hist[:, -1] - state.x_hist[:, 0] < cfg.stuck_distance)
    fall = (np.abs(state.rpy[:, 0]) > cfg.fall_threshold) | (np.abs(state.rpy[:, 1]) > cfg.fall_threshold)
    coll = collision & cfg.terminate_on_collision
    out[timeout] = Termination.TIMEOUT
    out[stuck] = Termination.STUCK
    out[coll] = Termination.COLLISION
    out[fall] = Termination.FALL_OVER
    return out


# -- observations -------------------------------------------------------------

def proprioception(state: RobotState, cmd: Command, cfg: EnvConfig) -> np.ndarray:
    q_def = default_joint_positions(cfg)
    return np.concatenate([
        projected_gravity(state.rpy),
        state.ang_vel,
        state.q - q_def,
        state.qd * cfg.dof_vel_obs_scale,
        state.last_action,
        cmd.as_array(),
    ], axis=-1)


def body_velocity(state: RobotState) -> np.ndarray:
    yaw = state.rpy[:, 2]
    cy, sy = np.cos(yaw), np.sin(yaw)
    v = state.vel
    return np.stack([cy * v[:, 0] + sy * v[:, 1], -sy * v[:, 0] + cy * v[:, 1], v[:, 2]], -1)


def assemble_observations(o_t: np.ndarray, v_est: np.ndarray, e_est: np.ndarray,
                          v_true: np.ndarray, e_true: np.ndarray, hmap: np.ndarray,
                          a_blind_prev: np.ndarray, a_percep_prev: np.ndarray):
    """Build (o_t, s_blind, s_percep, s_critic); every input has a leading env axis.

    Cross-policy action slots carry the other agent's action from the previous step.
    """
    n = o_t.shape[0]
    h = hmap.reshape(n, -1)
    if o_t.shape[1] != OBS_DIM:
        raise ValueError(f"o_t has {o_t.shape[1]} entries, expected {OBS_DIM}")
    for name, arr, width in (("v_est", v_est, 3), ("v_true", v_true, 3),
                             ("a_blind_prev", a_blind_prev, N_JOINTS),
                             ("a_percep_prev", a_percep_prev, N_JOINTS)):
        if arr.shape != (n, width):
            raise ValueError(f"{name} has shape {arr.shape}, expected {(n, width)}")
    if e_est.shape != e_true.shape or e_est.shape[0] != n:
        raise ValueError("latent shapes disagree")
    s_blind = np.concatenate([o_t, v_est, e_est, a_percep_prev], axis=1)
    s_percep = np.concatenate([o_t, h, a_blind_prev], axis=1)
    s_critic = np.concatenate([o_t, v_true, e_true, h, a_percep_prev, a_blind_prev], axis=1)
    return o_t, s_blind, s_percep, s_critic
