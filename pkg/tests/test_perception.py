import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbc.config import HeightmapNoiseConfig, PerceptionConfig
from mbc.perception import (
    ElevationSensor, corrupt_elevation_map, corrupt_grid, extract_elevation_map, set_perception_active,
)
from mbc.terrain import Kind, TerrainStack, generate_heightfield, make_spec

PC = PerceptionConfig()
QUIET = HeightmapNoiseConfig(base_z_noise=(0.0, 0.0), gaussian_noise=(0.0, 0.0), spike_proportion=0.0,
                             spike_magnitude=(0.0, 0.0))


def flat():
    return generate_heightfield(make_spec(Kind.SLOPE, 0.0))


def test_flat_terrain_gives_constant_offset():
    m = extract_elevation_map(flat(), (5.0, 0.3, 0.3, 0.7), PC)
    assert m.dims == (24, 16)
    assert np.all(m.grid == -0.3)


def test_step_ahead_shows_in_forward_rows():
    hf = generate_heightfield(make_spec(Kind.STAIRS, 0.0, step_height=0.13), strict=False)
    x0 = 4.0
    m = extract_elevation_map(hf, (x0 - 0.5, 0.0, 0.0, 0.0), PC)
    back = PC.rows - round(PC.rows * PC.forward_fraction)
    fwd = (np.arange(PC.rows) - back + 0.5) * PC.resolution
    near = fwd < 0.5
    np.testing.assert_allclose(m.grid[near], 0.0)
    assert np.all(m.grid[(fwd > 0.5) & (fwd < 0.5 + 0.31)] == pytest.approx(0.13))


def test_half_turn_rotates_the_grid():
    pc = PerceptionConfig(rows=20, cols=16, forward_fraction=0.5)
    hf = generate_heightfield(make_spec(Kind.DISCRETE, 1.0, seed=4))
    a = extract_elevation_map(hf, (8.02, 0.01, 0.0, 0.0), pc).grid
    b = extract_elevation_map(hf, (8.02, 0.01, 0.0, np.pi), pc).grid
    assert a.std() > 0
    np.testing.assert_array_equal(a, b[::-1, ::-1])


def test_zero_noise_is_identity():
    grid = np.random.default_rng(0).normal(size=(24, 16))
    out, spikes = corrupt_grid(grid, QUIET, np.random.default_rng(1))
    np.testing.assert_array_equal(out, grid)
    assert not spikes.any()


def test_noise_statistics_over_a_million_cells():
    cfg = HeightmapNoiseConfig()
    rng = np.random.default_rng(2)
    truth = np.zeros((1000, 1000))
    spiked = 0
    worst_clean = 0.0
    spike_mags = []
    for k in range(10):
        out, spikes = corrupt_grid(truth[k * 100:(k + 1) * 100], cfg, rng)
        spiked += spikes.sum()
        worst_clean = max(worst_clean, np.abs(out[~spikes]).max())
        spike_mags.append(out[spikes])
    frac = spiked / 1e6
    assert 0.045 <= frac <= 0.055
    assert worst_clean <= 0.05 + 0.02
    mags = np.abs(np.concatenate(spike_mags))
    assert mags.min() >= 0.1 - 0.05 and mags.max() <= 0.5 + 0.05


def test_corruption_is_deterministic():
    m = extract_elevation_map(flat(), (5.0, 0.0, 0.4, 0.0), PC)
    a = corrupt_elevation_map(m, HeightmapNoiseConfig(), np.random.default_rng(7))
    b = corrupt_elevation_map(m, HeightmapNoiseConfig(), np.random.default_rng(7))
    assert a.grid.tobytes() == b.grid.tobytes()


def test_inactive_map_is_zero_and_cannot_be_corrupted():
    m = extract_elevation_map(flat(), (5.0, 0.0, 0.4, 0.0), PC)
    off = set_perception_active(m, False)
    assert not off.active and np.all(off.grid == 0.0)
    assert set_perception_active(off, False).grid.tobytes() == off.grid.tobytes()
    with pytest.raises(ValueError):
        corrupt_elevation_map(off, HeightmapNoiseConfig(), np.random.default_rng(0))


def sensor_with_stack(noise, n=2):
    hf = flat()
    stack = TerrainStack([hf] * n)
    rngs = [np.random.default_rng(k) for k in range(n)]
    return ElevationSensor(PC, noise, n, rngs), stack


def test_delay_and_hold():
    sensor, _ = sensor_with_stack(QUIET, 1)
    d, period = QUIET.update_delay_steps, QUIET.update_period_steps
    sensor.reset(np.array([0]), np.full((1, 24, 16), -1.0))
    seen = []
    for t in range(1, 31):
        sensor.push(np.full((1, 24, 16), float(t)))
        seen.append(sensor.observe()[0, 0, 0])
    for t, v in enumerate(seen, start=1):
        last_tick = t - t % period
        expected = last_tick - d if last_tick - d >= 1 else -1.0
        assert v == expected, (t, v, expected)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.booleans()), min_size=1, max_size=30))
def test_hot_swap_totality(ops):
    sensor, _ = sensor_with_stack(HeightmapNoiseConfig(), 2)
    sensor.reset(np.arange(2), np.random.default_rng(0).normal(size=(2, 24, 16)))
    rng = np.random.default_rng(1)
    for env, active in ops:
        sensor.set_active(env, active)
        sensor.push(rng.normal(size=(2, 24, 16)))
        obs = sensor.observe()
        for e in range(2):
            if not sensor.active[e]:
                assert np.all(obs[e] == 0.0)


def test_reactivation_resumes_on_next_tick():
    sensor, _ = sensor_with_stack(QUIET, 1)
    sensor.reset(np.array([0]), np.zeros((1, 24, 16)))
    sensor.set_active(0, False)
    for t in range(1, 5):
        sensor.push(np.full((1, 24, 16), float(t)))
    sensor.set_active(0, True)
    assert np.all(sensor.observe() == 0.0)  # held until the refresh tick
    sensor.push(np.full((1, 24, 16), 5.0))
    assert np.all(sensor.observe() == 0.0)  # delayed view from before step 1
    for t in range(6, 11):
        sensor.push(np.full((1, 24, 16), float(t)))
    assert np.all(sensor.observe() == 5.0)


def test_noise_config_validation():
    from mbc.config import ConfigError
    with pytest.raises(ConfigError):
        HeightmapNoiseConfig(spike_proportion=1.5)
    with pytest.raises(ConfigError):
        HeightmapNoiseConfig(spike_magnitude=(0.5, 0.1))
