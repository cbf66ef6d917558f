import pytest

from mbc.config import RunConfig


def make_tiny_config(seed: int = 0) -> RunConfig:
    """Small nets, few envs and short rollouts so training tests take seconds."""
    cfg = RunConfig(seed=seed)
    cfg.env.n_envs = 4
    cfg.net.actor_hidden = (16,)
    cfg.net.critic_hidden = (16,)
    cfg.net.priv_encoder_hidden = (8,)
    cfg.net.history_encoder_hidden = (16,)
    cfg.net.vae_hidden = 16
    cfg.net.vae_latent = 4
    cfg.net.history_len = 4
    cfg.stage1.steps_per_rollout = 6
    cfg.stage1.calibration_patches = 16
    cfg.stage1.vae_pool_patches = 8
    cfg.stage1.vae_pool_fields = 4
    cfg.stage2.steps_per_rollout = 6
    cfg.eval.trials = 4
    cfg.eval.repeats = 2
    cfg.eval.steps = 40
    return cfg


@pytest.fixture
def tiny_cfg():
    return make_tiny_config()


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
