import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mbc.config import PpoConfig
from mbc.cooperation import PrivEncoderInput, penalty_extra
from mbc.nn import Mlp, finite_diff_check
from mbc.rl import (
    Agent, Learner, TrainingError, agent_loss_and_grads, compute_gae, gaussian_kl, kl_adaptive_lr,
    make_batch, mappo_update, normalize, ppo_losses, ppo_update,
)


def gae_oracle(r, v, d, last, gamma, lam):
    """Direct sum A_t = sum_l (gamma lam)^l delta_{t+l}, stopping after the first done."""
    T, N = r.shape
    nxt = np.vstack([v[1:], last[None]])
    delta = r + gamma * nxt * (1 - d) - v
    adv = np.zeros((T, N))
    for n in range(N):
        for t in range(T):
            total, w = 0.0, 1.0
            for u in range(t, T):
                total += w * delta[u, n]
                if d[u, n]:
                    break
                w *= gamma * lam
            adv[t, n] = total
    return adv


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1),
       st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_gae_matches_brute_force(T, N, seed, gamma, lam):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=(T, N)), rng.normal(size=(T, N))
    d = rng.random((T, N)) < 0.3
    last = rng.normal(size=N)
    adv, ret = compute_gae(r, v, d, last, gamma, lam)
    assert np.max(np.abs(adv - gae_oracle(r, v, d, last, gamma, lam))) <= 1e-10
    np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_gae_single_step_examples():
    adv, ret = compute_gae(np.array([[1.0]]), np.array([[0.5]]), np.array([[False]]), np.array([2.0]), 0.9, 0.95)
    assert adv[0, 0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.5)
    adv, _ = compute_gae(np.array([[1.0]]), np.array([[0.5]]), np.array([[True]]), np.array([2.0]), 0.9, 0.95)
    assert adv[0, 0] == pytest.approx(0.5)


def test_done_blocks_bootstrap_from_next_episode():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
    d = np.zeros((6, 1), bool)
    d[2] = True
    a1, _ = compute_gae(r, v, d, np.zeros(1))
    r2, v2 = r.copy(), v.copy()
    r2[3:] += 100.0
    v2[3:] -= 50.0
    a2, _ = compute_gae(r2, v2, d, np.full(1, 7.0))
    np.testing.assert_array_equal(a1[:3], a2[:3])


@given(hnp.arrays(float, st.integers(2, 50), elements=st.floats(-100, 100)),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_normalize_is_affine_invariant(x, scale, shift):
    # invariance holds up to eps/std, so keep the std well above eps
    if np.std(x) * min(scale, 1.0) < 1e-2:
        return
    np.testing.assert_allclose(normalize(x), normalize(scale * x + shift), atol=1e-4)


# -- losses -------------------------------------------------------------------

def test_ppo_losses_identity_ratio():
    adv = np.array([1.0, -2.0, 0.5])
    lp = np.array([-1.0, -2.0, -0.3])
    t = ppo_losses(lp, adv, np.zeros(3), lp, np.ones(3), np.full(3, 2.0))
    assert t.surrogate == pytest.approx(-np.mean(adv))
    assert t.value_loss == pytest.approx(1.0)
    assert t.entropy == 2.0 and t.approx_kl == 0.0
    np.testing.assert_allclose(t.g_logp, -adv / 3)


def test_ppo_clipping_cuts_gradient():
    # ratio 1.5 with positive advantage: clipped branch wins, no gradient
    t = ppo_losses(np.zeros(1), np.ones(1), np.zeros(1), np.full(1, np.log(1.5)), np.zeros(1), np.zeros(1), 0.2)
    assert t.surrogate == pytest.approx(-1.2)
    assert t.g_logp[0] == 0.0
    # ratio 1.5 with negative advantage: unclipped is the minimum, gradient stays
    t = ppo_losses(np.zeros(1), -np.ones(1), np.zeros(1), np.full(1, np.log(1.5)), np.zeros(1), np.zeros(1), 0.2)
    assert t.surrogate == pytest.approx(1.5)
    assert t.g_logp[0] == pytest.approx(1.5)


def test_ppo_loss_grads_match_finite_differences():
    rng = np.random.default_rng(1)
    old = rng.normal(size=8)
    adv = rng.normal(size=8)
    ret = rng.normal(size=8)
    new = old + rng.uniform(-0.15, 0.15, size=8)
    vals = rng.normal(size=8)
    t = ppo_losses(old, adv, ret, new, vals, np.zeros(8))
    f = lambda x: ppo_losses(old, adv, ret, x, vals, np.zeros(8)).surrogate
    assert finite_diff_check(f, new, t.g_logp) <= 1e-4
    g = lambda x: ppo_losses(old, adv, ret, new, x, np.zeros(8)).value_loss
    assert finite_diff_check(g, vals, t.g_value) <= 1e-4


def test_gaussian_kl_zero_and_known_value():
    mu = np.zeros((1, 2))
    assert gaussian_kl(mu, mu, mu, mu)[0] == 0.0
    # KL(N(0,1) || N(1,1)) = 1/2 per dimension
    assert gaussian_kl(mu, mu, mu + 1.0, mu)[0] == pytest.approx(1.0)


@pytest.mark.parametrize("kl,expected", [(0.05, 1e-3 / 1.5), (0.001, 1.5e-3), (0.01, 1e-3)])
def test_kl_adaptive_lr(kl, expected):
    assert kl_adaptive_lr(1e-3, kl) == pytest.approx(expected)


def test_kl_adaptive_lr_bounds():
    assert kl_adaptive_lr(1e-2, 0.0) == 1e-2
    assert kl_adaptive_lr(1e-6, 1.0) == 1e-6
    with pytest.raises(ValueError):
        kl_adaptive_lr(0.0, 0.01)


# -- agent gradients ----------------------------------------------------------

def tiny_setup(seed=0, with_encoder=False, clip_value_loss=False):
    rng = np.random.default_rng(seed)
    obs_dim, critic_dim, act = 5, 6, 3
    agent = Agent(obs_dim, critic_dim, act, (6,), (6,), "elu", -0.3, rng, actor_out_gain=1.0)
    cfg = PpoConfig(clip_value_loss=clip_value_loss, entropy_coef=0.01, value_coef=1.0)
    B = 16
    obs = rng.normal(size=(B, obs_dim))
    cobs = rng.normal(size=(B, critic_dim))
    enc, sl = None, None
    if with_encoder:
        enc = PrivEncoderInput(Mlp((4, 5, 2), "elu", rng=rng, out_gain=1.0), rng.normal(size=(B, 4)))
        sl = slice(1, 3)
    learner = Learner(agent, cfg, enc, sl)
    mean = agent.actor(obs)
    actions = mean + np.exp(agent.log_std) * rng.normal(size=mean.shape)
    from mbc.nn import gaussian_log_prob
    logp = gaussian_log_prob(actions, mean, np.broadcast_to(agent.log_std, mean.shape))
    vals = agent.value(cobs)
    batch = make_batch(obs[:, None], cobs[:, None], actions[:, None], logp[:, None], mean[:, None], agent.log_std,
                       vals[:, None], rng.normal(size=(B, 1)), rng.normal(size=(B, 1)))
    # move away from ratio == 1 so the check exercises the clipped regions too
    flat = learner.get_flat() + 0.05 * rng.normal(size=learner.get_flat().shape)
    return learner, batch, flat, rng


def test_tiny_agent_stays_small():
    learner, _, flat, _ = tiny_setup(with_encoder=True)
    assert len(flat) <= 200


@pytest.mark.parametrize("with_encoder", [False, True])
@pytest.mark.parametrize("clip_value_loss", [False, True])
def test_agent_loss_grads_match_finite_differences(with_encoder, clip_value_loss):
    learner, batch, flat, rng = tiny_setup(3, with_encoder, clip_value_loss)
    idx = np.arange(len(batch))
    mask = rng.random(len(batch)) < 0.7 if with_encoder else None
    extra = penalty_extra((rng.random(len(batch)) < 0.5).astype(float), 0.3)
    loss, grads, *_ = agent_loss_and_grads(learner, batch, idx, flat, extra, mask)
    f = lambda p: agent_loss_and_grads(learner, batch, idx, p, extra, mask)[0]
    assert f(flat) == loss
    assert finite_diff_check(f, flat, grads) <= 1e-4


def test_ppo_update_twenty_steps_improves_and_is_deterministic():
    results = []
    for _ in range(2):
        learner, batch, _, _ = tiny_setup(5)
        cfg = learner.cfg
        cfg.epochs, cfg.minibatches = 5, 4
        before = agent_loss_and_grads(learner, batch, np.arange(len(batch)), learner.get_flat())[0]
        stats = ppo_update(learner, batch, np.random.default_rng(11))
        after = agent_loss_and_grads(learner, batch, np.arange(len(batch)), learner.get_flat())[0]
        assert stats.n_steps == 20
        assert all(np.isfinite(stats.surrogate)) and after < before
        assert max(stats.clipped_grad_norm) <= 1.0 + 1e-12  # measured on the rescaled gradient
        results.append(learner.get_flat())
    np.testing.assert_array_equal(results[0], results[1])


def test_ppo_update_raises_on_non_finite():
    learner, batch, _, _ = tiny_setup(6)
    batch.returns[0] = np.nan
    with pytest.raises(TrainingError):
        ppo_update(learner, batch, np.random.default_rng(0))


def test_mappo_agents_are_independent():
    la, ba, _, _ = tiny_setup(7)
    lb, bb, _, _ = tiny_setup(8)
    mappo_update(la, lb, ba, bb, np.random.default_rng(1), np.random.default_rng(2))
    ref_a, ref_ba, _, _ = tiny_setup(7)
    lb2, bb2, _, _ = tiny_setup(8)
    bb2.advantages = -bb2.advantages  # a different partner batch must not change agent A
    mappo_update(ref_a, lb2, ref_ba, bb2, np.random.default_rng(1), np.random.default_rng(2))
    np.testing.assert_array_equal(la.get_flat(), ref_a.get_flat())
    assert not np.array_equal(lb.get_flat(), lb2.get_flat())


def test_gae_one_step_with_zero_values():
    adv, _ = compute_gae(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1), bool), np.zeros(1), 0.99, 0.95)
    assert adv[0, 0] == 1.0


def test_gae_lambda_one_is_monte_carlo_minus_value():
    rng = np.random.default_rng(12)
    r, v = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    last = rng.normal(size=2)
    adv, _ = compute_gae(r, v, np.zeros((7, 2), bool), last, 0.9, 1.0)
    g = last.copy()
    for t in range(6, -1, -1):
        g = r[t] + 0.9 * g
        np.testing.assert_allclose(adv[t], g - v[t], atol=1e-12)


def test_clip_rule_on_ratio_two():
    t = ppo_losses(np.zeros(1), np.ones(1), np.zeros(1), np.full(1, np.log(2.0)), np.zeros(1), np.zeros(1), 0.2)
    assert -t.surrogate == pytest.approx(1.2)


def test_kl_three_times_target_divides_lr():
    assert kl_adaptive_lr(3e-4, 0.03) == pytest.approx(2e-4)


def test_zero_advantages_move_only_log_std():
    learner, batch, _, _ = tiny_setup(9)
    batch.advantages[:] = 0.0
    batch.returns[:] = learner.agent.value(batch.critic_obs)  # critic already exact
    learner.cfg.adaptive_lr = False
    before = learner.get_flat()
    ppo_update(learner, batch, np.random.default_rng(0))
    after = learner.get_flat()
    a_n, k = learner.agent.actor.n_params, learner.agent.act_dim
    assert np.array_equal(before[:a_n], after[:a_n])
    assert np.array_equal(before[a_n + k:], after[a_n + k:])
    assert np.all(after[a_n:a_n + k] > before[a_n:a_n + k])  # entropy bonus widens the policy
