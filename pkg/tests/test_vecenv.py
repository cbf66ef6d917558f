import numpy as np
import pytest

from mbc.env import Termination
from mbc.terrain import Kind, Phase, make_spec
from mbc.vecenv import VecEnv, env_rngs, fixed_sampler, phase_sampler


def rollout(cfg, n, workers, steps=30, seed=3, actions_seed=0):
    env = VecEnv(cfg, n, phase_sampler(Phase.STAGE1, cfg), seed, workers=workers)
    rng = np.random.default_rng(actions_seed)
    out = []
    for _ in range(steps):
        r, d, _ = env.step(rng.uniform(-1, 1, (n, 12)))
        out.append((env.state.pos.copy(), r.copy(), d.copy(), env.hmap.copy()))
    return out


def test_worker_count_does_not_change_trajectories(tiny_cfg):
    a = rollout(tiny_cfg, 4, 1)
    b = rollout(tiny_cfg, 4, 3)
    for x, y in zip(a, b):
        for u, v in zip(x, y):
            assert u.tobytes() == v.tobytes()


def test_env_streams_do_not_depend_on_batch_size():
    a = env_rngs(5, 2)
    b = env_rngs(5, 6)
    for k in range(2):
        assert a[k].integers(1 << 62) == b[k].integers(1 << 62)


def test_same_seed_same_rollout(tiny_cfg):
    a = rollout(tiny_cfg, 3, 1, steps=15)
    b = rollout(tiny_cfg, 3, 1, steps=15)
    assert all(x[0].tobytes() == y[0].tobytes() for x, y in zip(a, b))
    c = rollout(tiny_cfg, 3, 1, steps=15, seed=4)
    assert any(x[0].tobytes() != y[0].tobytes() for x, y in zip(a, c))


def test_step_rejects_wrong_action_shape(tiny_cfg):
    env = VecEnv(tiny_cfg, 2, phase_sampler(Phase.STAGE1, tiny_cfg), 0)
    with pytest.raises(ValueError):
        env.step(np.zeros((2, 11)))


def test_reward_terms_sum_to_reward(tiny_cfg):
    env = VecEnv(tiny_cfg, 3, phase_sampler(Phase.STAGE2, tiny_cfg), 1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        r, _, info = env.step(rng.normal(size=(3, 12)))
        np.testing.assert_allclose(sum(info["reward_terms"].values()), r, rtol=0, atol=1e-12)


def test_frozen_envs_stay_put(tiny_cfg):
    env = VecEnv(tiny_cfg, 2, fixed_sampler(make_spec(Kind.SLOPE, 0.0)), 0, auto_reset=False, curriculum=False)
    for _ in range(tiny_cfg.env.stuck_window + 2):
        env.step(np.zeros((2, 12)))
    assert env.done.all() and np.all(env.reason == Termination.STUCK)
    pos = env.state.pos.copy()
    r, d, _ = env.step(np.zeros((2, 12)))
    assert env.state.pos.tobytes() == pos.tobytes()
    assert not r.any() and not d.any()


def test_auto_reset_logs_episode_and_respawns(tiny_cfg):
    tiny_cfg.env.episode_length = 5
    env = VecEnv(tiny_cfg, 2, fixed_sampler(make_spec(Kind.SLOPE, 0.0)), 0, curriculum=False)
    dones = [env.step(np.zeros((2, 12)))[1] for _ in range(5)]
    assert dones[-1].all() and not any(d.any() for d in dones[:-1])
    assert env.log.lengths == [5, 5]
    assert np.all(env.state.step == 0)
    assert np.all(env.state.pos[:, 0] == env.terrain.fields[0].spawn_pose[0])


def test_pushes_follow_interval(tiny_cfg):
    tiny_cfg.domain_rand.push_interval_s = 0.1  # every 5 control steps
    env = VecEnv(tiny_cfg, 2, fixed_sampler(make_spec(Kind.SLOPE, 0.0)), 0, curriculum=False)
    pushed = [np.abs(env.step(np.zeros((2, 12)))[2]["pushed"]).sum(1) > 0 for _ in range(10)]
    for t, p in enumerate(pushed, start=1):
        if t % 5:
            assert not p.any()
    assert np.all(np.linalg.norm(env.step(np.zeros((2, 12)))[2]["pushed"], axis=1) <= 0.5)


def test_perception_toggle_zeroes_maps(tiny_cfg):
    env = VecEnv(tiny_cfg, 2, phase_sampler(Phase.STAGE2, tiny_cfg), 2)
    assert env.hmap.any()
    env.set_perception(False, [1])
    for _ in range(3):
        env.step(np.zeros((2, 12)))
        assert not env.hmap[1].any() and env.hmap[0].any()


def test_state_dict_continues_bit_exactly(tiny_cfg):
    rng = np.random.default_rng(0)
    acts = rng.uniform(-1, 1, (40, 3, 12))
    a = VecEnv(tiny_cfg, 3, phase_sampler(Phase.STAGE2, tiny_cfg), 9)
    for t in range(20):
        a.step(acts[t])
    blocks, meta, rngs = a.state_dict()
    b = VecEnv(tiny_cfg, 3, phase_sampler(Phase.STAGE2, tiny_cfg), 123)
    b.load_state_dict({k: v.copy() for k, v in blocks.items()}, meta, rngs)
    for t in range(20, 40):
        ra, da, _ = a.step(acts[t])
        rb, db, _ = b.step(acts[t])
        assert ra.tobytes() == rb.tobytes() and da.tobytes() == db.tobytes()
        assert a.hmap.tobytes() == b.hmap.tobytes()
    assert a.state.pos.tobytes() == b.state.pos.tobytes()


def test_curriculum_moves_difficulty_in_tenths(tiny_cfg):
    tiny_cfg.env.stuck_window = 10
    env = VecEnv(tiny_cfg, 2, phase_sampler(Phase.STAGE1, tiny_cfg), 0, initial_difficulty=(0.5, 0.5))
    for _ in range(11):
        env.step(np.zeros((2, 12)))  # standing still: stuck, little progress
    np.testing.assert_allclose(env.difficulty, 0.4)
