import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbc import env as E
from mbc.config import DomainRandConfig, EnvConfig, RewardConfig
from mbc.terrain import Kind, TerrainStack, generate_heightfield, make_spec

ENV = EnvConfig()
RW = RewardConfig()


def flat_stack(n=1):
    return TerrainStack([generate_heightfield(make_spec(Kind.SLOPE, 0.0))] * n)


def standing(n=1, stack=None, x=2.0):
    stack = stack or flat_stack(n)
    ids = np.arange(n)
    spawn = np.tile([x, 0.0, 0.0], (n, 1))
    dp = E.identity_domain_params(n)
    return E.reset_state(stack, ids, spawn, dp, ENV), stack, ids, dp


# -- kinematics -------------------------------------------------------------------

def test_straight_leg_is_below_hip():
    np.testing.assert_allclose(E.leg_forward_kinematics([0.0, 0.0, 0.0]), [0.0, 0.0, -0.42], atol=1e-15)


def test_knee_at_right_angle():
    x, y, z = E.leg_forward_kinematics([0.0, 0.0, math.pi / 2])
    assert z == pytest.approx(-0.21, abs=1e-15)
    assert x == pytest.approx(0.21, abs=1e-15)


@given(st.floats(-0.8, 0.8), st.floats(-1.0, 2.6), st.floats(-2.7, -0.8))
def test_roll_flip_mirrors_lateral_offset(r, t, k):
    a = E.leg_forward_kinematics([r, t, k])
    b = E.leg_forward_kinematics([-r, t, k])
    assert b[1] == -a[1]
    assert (a[0], a[2]) == (b[0], b[2])


def test_kinematics_rejects_nan():
    with pytest.raises(ValueError):
        E.leg_forward_kinematics([0.0, np.nan, 0.0])


# -- domain randomization ---------------------------------------------------------

def test_domain_params_stay_in_ranges():
    cfg = DomainRandConfig()
    rng = np.random.default_rng(0)
    dps = E.concat_params([E.sample_domain_params(rng, cfg) for _ in range(500)])
    assert dps.added_mass.min() >= 0.0 and dps.added_mass.max() <= 3.0
    assert dps.friction.min() >= 0.6 and dps.friction.max() <= 2.0
    assert set(np.unique(dps.delay)) <= set(range(0, 5))
    assert set(np.unique(dps.delay)) == set(range(0, 5))
    lo, hi = cfg.motor_strength
    assert dps.motor_strength.min() >= lo and dps.motor_strength.max() <= hi
    lo, hi = cfg.init_joint_scale
    assert dps.init_joint_scale.min() >= lo and dps.init_joint_scale.max() <= hi
    assert dps.push_velocity.max() <= 0.5
    assert np.all(np.abs(E.privileged_vector(dps, cfg)) <= 1.0 + 1e-12)


def test_degenerate_ranges_give_identity():
    cfg = DomainRandConfig(added_mass=(0.0, 0.0), com_offset=(0.0, 0.0), friction=(1.0, 1.0),
                           motor_strength=(1.0, 1.0), kp_scale=(1.0, 1.0), kd_scale=(1.0, 1.0),
                           init_joint_scale=(1.0, 1.0), action_delay_substeps=(0, 0), push_velocity=(0.0, 0.0))
    got = E.sample_domain_params(np.random.default_rng(3), cfg)
    ref = E.identity_domain_params(1, cfg)
    for name, arr in ref.arrays().items():
        np.testing.assert_array_equal(getattr(got, name), arr)


def test_privileged_vector_width():
    dp = E.sample_domain_params(np.random.default_rng(0))
    assert E.privileged_vector(dp).shape == (1, E.PRIV_DIM)


# -- reset / step -----------------------------------------------------------------

def test_reset_height_on_flat_ground():
    s, *_ = standing(3)
    np.testing.assert_allclose(s.pos[:, 2], 0.42, atol=1e-9)
    assert s.contact.all()
    assert not s.vel.any() and not s.qd.any()


def test_reset_on_a_step_is_offset_by_step_height():
    hf = generate_heightfield(make_spec(Kind.STAIRS, 0.0, step_height=0.13, step_width=0.30), strict=False)
    stack = TerrainStack([hf])
    x_on_third = 4.0 + 2 * 0.30 + 0.15
    # pick a spawn whose footprint fits inside one tread: feet lie at x +- 0.19 +- fk x
    fb, _ = E.feet_body(E.default_joint_positions(ENV)[None], np.zeros((1, 12)), ENV)
    span = fb[0, :, 0].max() - fb[0, :, 0].min()
    assert span > 0.30  # footprint straddles treads, so compare against the foot-wise ground
    s, *_ = standing(1, stack, x=x_on_third)
    feet_ground = stack.heights(np.zeros((1, 4), int), s.feet[..., 0], s.feet[..., 1])
    assert s.pos[0, 2] == pytest.approx(0.42 + feet_ground.mean(), abs=1e-9)
    assert s.pos[0, 2] > 0.42 + 0.13


def test_reset_is_deterministic():
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    stack = flat_stack()
    a = E.reset_state(stack, np.arange(1), np.array([[2.0, 0.1, 0.2]]), E.sample_domain_params(rng_a), ENV)
    b = E.reset_state(stack, np.arange(1), np.array([[2.0, 0.1, 0.2]]), E.sample_domain_params(rng_b), ENV)
    for name, arr in a.arrays().items():
        assert arr.tobytes() == getattr(b, name).tobytes()


def test_zero_action_stands_still():
    s, stack, ids, dp = standing()
    z0 = s.pos[0, 2]
    worst = 0.0
    for t in range(500):
        s, _ = E.physics_step(s, np.zeros((1, 12)), stack, ids, dp, ENV)
        worst = max(worst, abs(s.pos[0, 2] - z0))
        if t == 49:
            assert np.linalg.norm(s.vel[0]) < 0.01
    assert worst <= 0.005
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.STUCK


def test_folding_all_joints_drops_the_base():
    s, stack, ids, dp = standing()
    z0 = s.pos[0, 2]
    fold = np.tile([0.0, 1.0, -1.0], 4)[None]  # thigh forward, calf tucked
    for _ in range(10):
        s, _ = E.physics_step(s, fold, stack, ids, dp, ENV)
    assert s.pos[0, 2] < z0 - 0.01


def test_push_adds_exact_velocity():
    s, *_ = standing(2)
    s.vel[:] = np.array([[0.3, -0.1, 0.0], [0.0, 0.0, 0.0]])
    before = s.vel.copy()
    dv = np.array([[0.25, -0.4], [0.0, 0.5]])
    E.apply_push(s, dv)
    np.testing.assert_array_equal(s.vel[:, :2], before[:, :2] + dv)
    np.testing.assert_array_equal(s.vel[:, 2], before[:, 2])


def test_non_finite_action_is_an_error():
    s, stack, ids, dp = standing()
    a = np.zeros((1, 12))
    a[0, 4] = np.inf
    with pytest.raises(E.SimulationError):
        E.physics_step(s, a, stack, ids, dp, ENV)


def test_contact_flags_agree_with_foot_height():
    s, stack, ids, dp = standing()
    rng = np.random.default_rng(0)
    for _ in range(40):
        s, _ = E.physics_step(s, rng.uniform(-1, 1, (1, 12)), stack, ids, dp, ENV)
        ground = stack.heights(ids[:, None], s.feet[..., 0], s.feet[..., 1])
        np.testing.assert_array_equal(s.contact, s.feet[..., 2] <= ground + 0.001)
        assert np.all(np.abs(s.rpy[:, :2]) < np.pi)


def test_delay_holds_previous_target():
    s, stack, ids, _ = standing()
    dp = E.identity_domain_params(1)
    dp.delay[:] = ENV.substeps  # whole step runs on the old target
    a = np.full((1, 12), 0.5)
    s1, _ = E.physics_step(s, a, stack, ids, dp, ENV)
    np.testing.assert_allclose(s1.q, s.q, atol=1e-12)
    np.testing.assert_array_equal(s1.last_target, E.default_joint_positions(ENV)[None] + 0.5 * 0.25)


# -- rewards ----------------------------------------------------------------------

def reward_oracle(prev, nxt, a_t, a_prev, tau_t, tau_prev, cmd, events, k=0):
    """Scalar recomputation of every weighted reward row for env ``k``."""
    roll, pitch, yaw = nxt.rpy[k]
    vx_b = math.cos(yaw) * nxt.vel[k, 0] + math.sin(yaw) * nxt.vel[k, 1]
    vy_b = -math.sin(yaw) * nxt.vel[k, 0] + math.cos(yaw) * nxt.vel[k, 1]
    herr = (cmd.heading[k] - yaw + math.pi) % (2 * math.pi) - math.pi
    gate = 1.0 if abs(herr) <= 0.6 else 0.0
    sigma = 0.25
    # gravity in the body frame: R^T (0, 0, -1)
    gx = math.sin(pitch)
    gy = -math.cos(pitch) * math.sin(roll)
    q_def = [0.1, 0.8, -1.5, -0.1, 0.8, -1.5, 0.1, 0.8, -1.5, -0.1, 0.8, -1.5]
    lo, hi = [-0.8, -1.0, -2.7] * 4, [0.8, 2.6, -0.8] * 4
    vz2 = nxt.vel[k, 2] ** 2
    wxy2 = nxt.ang_vel[k, 0] ** 2 + nxt.ang_vel[k, 1] ** 2
    limit = 0.0
    for j in range(12):
        mid, half = (lo[j] + hi[j]) / 2, (hi[j] - lo[j]) / 2
        limit += max(mid - 0.9 * half - nxt.q[k, j], 0.0) + max(nxt.q[k, j] - (mid + 0.9 * half), 0.0)
    return {
        "lin_vel_tracking": 1.5 * gate * math.exp(-((cmd.vx[k] - vx_b) ** 2 + (cmd.vy[k] - vy_b) ** 2) / (2 * sigma)),
        "ang_vel_tracking": 0.5 * gate * math.exp(-(cmd.yaw_rate[k] - nxt.ang_vel[k, 2]) ** 2 / sigma),
        "lin_vel_z": -1.0 * vz2,
        "ang_vel_xy": -0.1 * wxy2,
        "z_velocity": -1.0 * vz2,
        "xy_velocity": -0.1 * wxy2,
        "orientation": -0.7 * (gx ** 2 + gy ** 2),
        "dof_acc": -1.5e-7 * sum(v ** 2 for v in nxt.qdd[k]),
        "collision": -20.0 * min(events.collision_depth[k], 0.1),
        "action_rate": -0.11 * sum((a_t[k, j] - a_prev[k, j]) ** 2 for j in range(12)),
        "delta_torques": -1.0e-7 * sum((tau_t[k, j] - tau_prev[k, j]) ** 2 for j in range(12)),
        "torques": -1.0e-5 * sum(tau_t[k, j] ** 2 for j in range(12)),
        "hip_position": -0.8 * sum(nxt.q[k, j] ** 2 for j in (0, 3, 6, 9)),
        "dof_error": -0.04 * sum((nxt.q[k, j] - q_def[j]) ** 2 for j in range(12)),
        "feet_stumble": -2.0 * events.stumble[k],
        "termination": -5.0 * float(events.terminated[k]),
        "dof_pos_limits": -13.0 * limit,
    }


def random_reward_case(rng, n=4):
    s, *_ = standing(n)
    nxt = s.copy()
    nxt.rpy = rng.uniform(-0.5, 0.5, (n, 3)) * [1, 1, 6]
    nxt.vel = rng.normal(0, 0.6, (n, 3))
    nxt.ang_vel = rng.normal(0, 0.8, (n, 3))
    nxt.q = rng.uniform(np.tile(ENV.joint_lower, 4), np.tile(ENV.joint_upper, 4), (n, 12))
    nxt.qdd = rng.normal(0, 300.0, (n, 12))
    a_t, a_prev = rng.uniform(-1, 1, (2, n, 12))
    tau_t, tau_prev = rng.normal(0, 40.0, (2, n, 12))
    cmd = E.Command(rng.uniform(0.3, 1.0, n), np.zeros(n), rng.uniform(-0.5, 0.5, n), rng.uniform(-1, 1, n))
    events = E.Events(stumble=rng.integers(0, 2, n).astype(float), collision_depth=rng.uniform(0, 0.2, n),
                      collision=np.ones(n, bool), terminated=rng.integers(0, 2, n).astype(bool))
    return s, nxt, a_t, a_prev, tau_t, tau_prev, cmd, events


def reward_table(n_cases=100, seed=0):
    rng = np.random.default_rng(seed)
    return [random_reward_case(rng) for _ in range(n_cases)]


def test_rewards_match_hand_oracle_on_table():
    worst = 0.0
    for case in reward_table():
        out = E.compute_rewards(*case, RW, ENV)
        for k in range(4):
            ref = reward_oracle(*case, k=k)
            for name in E.REWARD_TERMS:
                worst = max(worst, abs(out.terms[name][k] - ref[name]))
    assert worst <= 1e-9


def test_reward_total_is_sum_of_terms():
    for case in reward_table(20, seed=1):
        out = E.compute_rewards(*case, RW, ENV)
        acc = sum(out.terms[name] for name in E.REWARD_TERMS)
        np.testing.assert_allclose(out.total, acc, rtol=0, atol=1e-12)


def perfect_tracking_case(heading=0.0):
    s, *_ = standing()
    nxt = s.copy()
    nxt.vel[:] = [[1.0, 0.0, 0.0]]
    cmd = E.Command(np.array([1.0]), np.array([0.0]), np.array([0.0]), np.array([heading]))
    ev = E.Events(np.zeros(1), np.zeros(1), np.zeros(1, bool), np.zeros(1, bool))
    z = np.zeros((1, 12))
    return s, nxt, z, z, z, z, cmd, ev


def test_perfect_tracking_earns_full_weight():
    out = E.compute_rewards(*perfect_tracking_case(), RW, ENV)
    assert out.terms["lin_vel_tracking"][0] == 1.5
    assert out.terms["ang_vel_tracking"][0] == 0.5


def test_heading_gate():
    assert E.compute_rewards(*perfect_tracking_case(0.59), RW, ENV).terms["lin_vel_tracking"][0] > 0
    for h in (0.61, -0.7, np.pi):
        out = E.compute_rewards(*perfect_tracking_case(h), RW, ENV)
        assert out.terms["lin_vel_tracking"][0] == 0.0
        assert out.terms["ang_vel_tracking"][0] == 0.0


def test_stumble_and_termination_contributions():
    case = list(perfect_tracking_case())
    case[-1] = E.Events(np.ones(1), np.zeros(1), np.zeros(1, bool), np.ones(1, bool))
    out = E.compute_rewards(*case, RW, ENV)
    assert out.terms["feet_stumble"][0] == -2.0
    assert out.terms["termination"][0] == -5.0


def test_standing_reward_is_near_tracking_maximum_and_constant():
    s, stack, ids, dp = standing()
    cmd = E.Command(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
    ev = E.Events(np.zeros(1), np.zeros(1), np.zeros(1, bool), np.zeros(1, bool))
    totals = []
    z = np.zeros((1, 12))
    for _ in range(100):
        nxt, _ = E.physics_step(s, z, stack, ids, dp, ENV)
        totals.append(E.compute_rewards(s, nxt, z, z, nxt.tau, s.tau, cmd, ev, RW, ENV).total[0])
        s = nxt
    assert abs(totals[-1] - 2.0) <= 0.1
    assert max(totals[10:]) - min(totals[10:]) <= 1e-6


def test_dedupe_flag_drops_duplicate_rows():
    case = reward_table(1, seed=2)[0]
    out = E.compute_rewards(*case, RewardConfig(dedupe_table6=True), ENV)
    assert not out.terms["z_velocity"].any() and not out.terms["xy_velocity"].any()
    assert out.terms["lin_vel_z"].any()


# -- termination ------------------------------------------------------------------

def moving(n=1):
    s, *_ = standing(n)
    s.x_hist[:] = np.linspace(0.0, 1.5, ENV.stuck_window + 1)
    s.age[:] = ENV.stuck_window
    return s


def test_fall_threshold():
    s = moving()
    s.rpy[0, 1] = 1.31
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.FALL_OVER
    s.rpy[0, 1] = 1.29
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.NONE
    s.rpy[0] = [-1.31, 0.0, 0.0]
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.FALL_OVER


def test_stuck_after_window_without_progress():
    s = moving()
    s.x_hist[:] = 2.0
    s.age[:] = ENV.stuck_window - 1
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.NONE
    s.age[:] = ENV.stuck_window
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.STUCK


def test_timeout_and_collision():
    s = moving()
    s.step[:] = 1000
    assert E.check_termination(s, np.zeros(1, bool), ENV)[0] == E.Termination.TIMEOUT
    s.step[:] = 999
    assert E.check_termination(s, np.ones(1, bool), ENV)[0] == E.Termination.COLLISION
    relaxed = EnvConfig(terminate_on_collision=False)
    assert E.check_termination(s, np.ones(1, bool), relaxed)[0] == E.Termination.NONE


# -- observations -----------------------------------------------------------------

def obs_inputs(n=2, latent=8, rows=24, cols=16, seed=0):
    rng = np.random.default_rng(seed)
    return dict(o_t=rng.normal(size=(n, 45)), v_est=rng.normal(size=(n, 3)), e_est=rng.normal(size=(n, latent)),
                v_true=rng.normal(size=(n, 3)), e_true=rng.normal(size=(n, latent)),
                hmap=rng.normal(size=(n, rows, cols)), a_blind_prev=rng.normal(size=(n, 12)),
                a_percep_prev=np.zeros((n, 12)))


def test_observation_layout():
    x = obs_inputs()
    o, sb, sp, sc = E.assemble_observations(**x)
    assert sb.shape == (2, 45 + 3 + 8 + 12)
    assert sp.shape == (2, 45 + 384 + 12)
    assert sc.shape == (2, 45 + 3 + 8 + 384 + 24)
    assert not sb[:, 56:].any()  # stage 1: perceptive action slot is zero
    np.testing.assert_array_equal(sc[:, 45:48], x["v_true"])
    np.testing.assert_array_equal(sp[:, 45:429], x["hmap"].reshape(2, -1))


def test_inactive_map_gives_zero_slot():
    x = obs_inputs()
    x["hmap"] = np.zeros_like(x["hmap"])
    _, _, sp, sc = E.assemble_observations(**x)
    assert not sp[:, 45:429].any() and not sc[:, 56:440].any()


def test_observation_dimension_errors():
    x = obs_inputs()
    x["o_t"] = x["o_t"][:, :44]
    with pytest.raises(ValueError):
        E.assemble_observations(**x)
    x = obs_inputs()
    x["a_blind_prev"] = x["a_blind_prev"][:, :11]
    with pytest.raises(ValueError):
        E.assemble_observations(**x)


def test_proprioception_at_rest():
    s, *_ = standing()
    cmd = E.Command(np.array([0.7]), np.zeros(1), np.array([0.1]), np.zeros(1))
    o = E.proprioception(s, cmd, ENV)
    assert o.shape == (1, 45)
    np.testing.assert_allclose(o[0, :3], [0.0, 0.0, -1.0], atol=1e-15)
    assert not o[0, 3:42].any()
    np.testing.assert_array_equal(o[0, 42:], [0.7, 0.0, 0.1])


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-3.0, 3.0))
def test_projected_gravity_is_unit(r, p, y):
    g = E.projected_gravity(np.array([[r, p, y]]))
    assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-12)
