import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stac.envs import (ENV_REGISTRY, POINT_REACH_CONFIG, RiskyPointMass, RiskyPointMassConfig, danger_occupancy,
                       make, proportional_controller, rollout, write_trajectory_csv)
from stac.errors import UsageError


def test_registry_ids():
    assert set(ENV_REGISTRY) == {"risky-pointmass-v0", "point-reach-v0"}
    with pytest.raises(UsageError, match="unknown env id"):
        make("HalfCheetah-v4")


def test_published_constants():
    c = RiskyPointMassConfig()
    assert (c.danger_center, c.danger_radius, c.goal, c.goal_radius) == ((0.5, 0.5), 0.3, (0.0, 0.0), 0.05)
    assert (c.step_penalty, c.danger_penalty, c.penalty_prob_scale, c.penalty_prob_decay) == (-0.1, -10.0, 0.1, 4.0)
    assert (c.max_move, c.slip_max, c.init_low, c.init_high) == (0.1, 0.02, 0.3, 1.0)


def test_resets_stay_in_init_box_and_outside_danger():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(0))
    pos = np.array([env.reset() for _ in range(100_000)])
    assert pos.min() >= 0.3 and pos.max() <= 1.0
    assert np.all(np.linalg.norm(pos - 0.5, axis=1) >= 0.3)


def test_reset_sequence_reproducible():
    a = [make("risky-pointmass-v0", rng=np.random.default_rng(4)).reset() for _ in range(1)]
    b = [make("risky-pointmass-v0", rng=np.random.default_rng(4)).reset() for _ in range(1)]
    np.testing.assert_array_equal(a, b)


def test_penalty_probability_example():
    env = RiskyPointMass()
    expected = 0.1 * math.exp(-4 * 0.05 / 0.09)
    assert env.penalty_probability((0.3, 0.4)) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.01083, abs=1e-5)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 1))
def test_penalty_zero_outside_circle(x, y):
    env = RiskyPointMass()
    if math.hypot(x - 0.5, y - 0.5) >= 0.3:
        assert env.penalty_probability((x, y)) == 0.0
    else:
        assert 0.0 < env.penalty_probability((x, y)) <= 0.1


def test_goal_terminates():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(1), slip_max=0.0)
    env.reset()
    env.pos = np.array([0.04, 0.03])
    _, _, terminated, truncated = env.step(np.zeros(2))
    assert terminated and not truncated


def test_reward_decomposition_without_penalty():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(2), penalty_enabled=False)
    s = env.reset()
    for _ in range(50):
        s, r, term, trunc = env.step(np.array([-0.3, 0.2]))
        assert r == -float(np.linalg.norm(s)) - 0.1
        if term or trunc:
            break


def test_danger_penalty_frequency_matches_probability():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(3), slip_max=0.0, clamp_to_unit_square=False)
    env.reset()
    hits, n = 0, 40_000
    for _ in range(n):
        env.pos = np.array([0.5, 0.5])
        env.steps = 0
        _, r, _, _ = env.step(np.zeros(2))
        hits += r < -5
    assert stats.binomtest(hits, n, 0.1).pvalue > 1e-3


@settings(max_examples=100, deadline=None)
@given(ax=st.floats(-1, 1), ay=st.floats(-1, 1), seed=st.integers(0, 2**31))
def test_displacement_bounded(ax, ay, seed):
    env = make("risky-pointmass-v0", rng=np.random.default_rng(seed))
    s = env.reset()
    s2, _, _, _ = env.step(np.array([ax, ay]))
    assert np.all(np.abs(s2 - s) <= 0.12 + 1e-12)


def test_slip_is_uniform_within_bound():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(5), penalty_enabled=False)
    env.reset()
    slips = []
    for _ in range(20_000):
        env.pos = np.array([0.9, 0.9])
        env.steps = 0
        s, _, _, _ = env.step(np.zeros(2))
        slips.append(s - 0.9)
    slips = np.asarray(slips).ravel()
    assert np.abs(slips).max() <= 0.02
    assert stats.kstest(slips, stats.uniform(-0.02, 0.04).cdf).pvalue > 1e-3


def test_truncation_at_episode_cap():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(6))
    env.reset()
    for t in range(200):
        env.pos = np.array([0.95, 0.95])
        _, _, term, trunc = env.step(np.zeros(2))
        assert not term
        assert trunc == (t == 199)


def test_non_finite_action_rejected():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(7))
    env.reset()
    with pytest.raises(UsageError):
        env.step(np.array([np.nan, 0.0]))


def test_point_reach_is_deterministic_and_solved_by_controller():
    env = make("point-reach-v0", rng=np.random.default_rng(8))
    assert env.config == POINT_REACH_CONFIG
    for _ in range(2_000):
        s = env.reset()
        for t in range(30):
            s, r, term, trunc = env.step(proportional_controller(s))
            if term:
                break
        assert term, "controller must reach the goal within 30 steps"


def test_danger_occupancy_examples():
    origin = [np.zeros((10, 2))]
    center = [np.full((10, 2), 0.5)]
    half = [np.vstack([np.zeros((5, 2)), np.full((5, 2), 0.5)])]
    assert danger_occupancy(origin).fraction == 0.0
    assert danger_occupancy(center).fraction == 1.0
    assert danger_occupancy(half).fraction == 0.5
    with pytest.raises(UsageError):
        danger_occupancy([])
    with pytest.raises(UsageError):
        danger_occupancy([np.zeros((0, 2))])


def test_occupancy_grid_conserves_positions():
    env = make("risky-pointmass-v0", rng=np.random.default_rng(9))
    rng = np.random.default_rng(10)
    episodes = rollout(env, lambda s: rng.uniform(-1, 1, 2), 500, np.random.default_rng(11))
    occ = danger_occupancy(episodes)
    assert occ.grid.shape == (100, 100)
    assert occ.grid.sum() == occ.n_positions == 500
    assert occ.grid.sum(axis=0).sum() == occ.grid.sum(axis=1).sum() == 500


def test_trajectory_csv_columns(tmp_path):
    env = make("point-reach-v0", rng=np.random.default_rng(12))
    episodes = rollout(env, proportional_controller, 40, np.random.default_rng(13))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(episodes, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["episode", "step", "x", "y", "reward", "terminated"]
    assert len(rows) == 41
