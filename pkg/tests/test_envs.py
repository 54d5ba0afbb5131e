from __future__ import annotations

import numpy as np
import pytest

from meangini.envs import (GuardedMaze, GuardedMazeConfig, NoisyRegionGrid, NoisyRegionGridConfig, load_env_config,
                           make_env, make_rng, risky_path_return_dist, safe_path_return, safe_path_reward_variance)
from meangini.risk_measures import exact_gd, exact_variance
from meangini.trajectory import rollout

CFG = GuardedMazeConfig()
UP, DOWN, LEFT, RIGHT = range(4)


def test_wall_and_boundary_moves_stay_put(rng):
    env = GuardedMaze()
    below_wall = env.state_of((1, 0))
    res = env.step(below_wall, UP, rng)
    assert res.next_state == below_wall and res.reward == -1.0 and not res.done
    corner = env.state_of((0, 0))
    res = env.step(corner, LEFT, rng)
    assert res.next_state == corner and res.reward == -1.0


def test_goal_entry_pays_goal_reward_only(rng):
    env = GuardedMaze(goal_reward=20.0)
    res = env.step(env.state_of((5, 1)), DOWN, rng)
    assert res.next_state == env.goal_state and res.reward == 20.0 and res.done
    assert res.info["reached_goal"]


def test_red_lottery_frequencies():
    env = GuardedMaze()
    rng = make_rng(42, "red")
    src = env.state_of((1, 0))
    draws = np.array([env.step(src, RIGHT, rng).reward for _ in range(100_000)])
    assert set(np.unique(draws)) <= {-15.0, -1.0, 13.0}
    freq = [(draws == v).mean() for v in (-15.0, -1.0, 13.0)]
    np.testing.assert_allclose(freq, [0.4, 0.2, 0.4], atol=0.01)


def test_invalid_action_raises(rng):
    env = GuardedMaze()
    with pytest.raises(ValueError):
        env.step(0, 7, rng)


def test_episode_truncated_at_max_steps(rng):
    env = GuardedMaze()
    probs = np.zeros((env.n_states, 4))
    probs[:, LEFT] = 1.0
    traj = rollout(env, probs, rng)
    assert len(traj) == 100 and not traj.reached_goal


def test_layout_invariants():
    env = GuardedMaze()
    safe, risky = env.safe_path_actions(), env.risky_path_actions()
    assert len(safe) == len(risky) == 11
    assert env.path_rewards(safe)[1] == []
    assert env.path_rewards(risky)[1] == [1]


def test_safe_path_return_closed_form():
    expected = -sum(0.999 ** t for t in range(10)) + 0.999 ** 10 * 20.0
    assert safe_path_return(CFG) == pytest.approx(expected, abs=1e-12)
    assert safe_path_return(CFG) == pytest.approx(9.846, abs=1e-3)
    assert safe_path_return(CFG, goal_reward=-60.7) == pytest.approx(-70.0, abs=0.5)


def test_path_return_variances():
    risky = risky_path_return_dist(CFG)
    assert exact_variance(risky) > 0 and exact_gd(risky) > 0
    env = GuardedMaze()
    probs = np.zeros((env.n_states, 4))
    s = env.state_of(env.start)
    for a in env.safe_path_actions():
        probs[s, a] = 1.0
        s = int(env.next_state_table()[s, a])
    returns = {rollout(env, probs, make_rng(0, "safe", i)).return_value for i in range(20)}
    assert len(returns) == 1
    assert returns.pop() == pytest.approx(safe_path_return(CFG), abs=1e-12)


def test_risky_distribution_atoms():
    dist = risky_path_return_dist(CFG)
    base = safe_path_return(CFG)
    np.testing.assert_allclose(np.sort(dist.values), base + 0.999 * np.array([-14.0, 0.0, 14.0]), atol=1e-12)


def test_per_step_reward_variance_examples():
    assert safe_path_reward_variance(CFG, 10.0) == pytest.approx(10.0, rel=0.1)
    assert safe_path_reward_variance(CFG, 20.0) == pytest.approx(36.4, rel=0.1)


def test_grid_outside_region_is_exact(rng):
    env = NoisyRegionGrid()
    res = env.step(env.state_of((4, 1)), LEFT, rng)
    assert res.reward == -0.1 and not res.info["in_noisy_region"]
    res = env.step(env.state_of((1, 1)), LEFT, rng)
    assert res.reward == pytest.approx(-0.1 + 10.0) and res.done


def test_grid_region_noise_variance():
    env = NoisyRegionGrid()
    rng = make_rng(9, "noise")
    src = env.state_of((5, 0))
    draws = np.array([env.step(src, UP, rng).reward for _ in range(100_000)])
    assert draws.var() == pytest.approx(100.0, rel=0.05)


def test_grid_decay_factor():
    cfg = NoisyRegionGridConfig(width=25, start=(0, 1), goals=(((24, 1), 1.0),), region_min_x=1, decay=True)
    assert cfg.noise_factor(20.0) == 0.0
    assert cfg.noise_factor(24.0) == 0.0
    assert cfg.noise_factor(5.0) == pytest.approx(10.0 * 0.75)
    env = NoisyRegionGrid(cfg)
    rng = make_rng(0, "decay")
    res = env.step(env.state_of((19, 1)), RIGHT, rng)
    assert res.reward == -0.1 and res.info["in_noisy_region"]


def test_config_validation():
    with pytest.raises(ValueError, match="outside"):
        GuardedMaze(goal=(9, 9))
    with pytest.raises(ValueError, match="wall"):
        GuardedMaze(red_cell=(1, 1))
    with pytest.raises(ValueError, match="empty"):
        NoisyRegionGridConfig(region_min_x=50)
    with pytest.raises(ValueError, match="decay"):
        NoisyRegionGridConfig(region_min_x=None, decay=True)
    with pytest.raises(ValueError, match="outside the grid"):
        NoisyRegionGrid(start=(20, 0))
    with pytest.raises(ValueError, match="unknown environment kind"):
        make_env({"kind": "cave"})


def test_seeded_rollouts_are_identical():
    env = GuardedMaze()
    probs = np.full((env.n_states, 4), 0.25)
    a = rollout(env, probs, make_rng(5, "train", 3, 1))
    b = rollout(env, probs, make_rng(5, "train", 3, 1))
    c = rollout(env, probs, make_rng(5, "train", 3, 2))
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert not (a.actions.size == c.actions.size and np.array_equal(a.actions, c.actions))


def test_rng_streams_are_pinned():
    # guards against silent changes of bit generator or stream derivation
    first = make_rng(0, "train", 0, 0).integers(0, 2 ** 32, size=3)
    again = np.random.Generator(np.random.Philox(np.random.SeedSequence(0, spawn_key=(
        int.from_bytes(__import__("hashlib").sha256(b"train").digest()[:4], "little"), 0, 0))))
    np.testing.assert_array_equal(first, again.integers(0, 2 ** 32, size=3))


def test_make_env_and_toml(tmp_path):
    path = tmp_path / "env.toml"
    path.write_text('[env]\nkind = "grid"\nwidth = 9\nheight = 3\nstart = [4, 1]\n'
                    'goals = [{cell = [0, 1], reward = 10.0}, {cell = [8, 1], reward = 12.0}]\n', encoding="utf-8")
    env = make_env(load_env_config(path))
    assert isinstance(env, NoisyRegionGrid) and env.goal_rewards[env.state_of((8, 1))] == 12.0
    maze = make_env({"kind": "maze", "goal_reward": 40.0, "walls": [[1, 1]]})
    assert isinstance(maze, GuardedMaze) and maze.config.goal_reward == 40.0 and maze.walls == {(1, 1)}
