from __future__ import annotations

import numpy as np
import pytest

from meangini.envs import GuardedMaze, NoisyRegionGrid, safe_path_return, GuardedMazeConfig
from meangini.harness import METRIC_COLUMNS, ConfigError, RunMetrics, TrainConfig, evaluate, train
from meangini.policies import TablePolicy

SMALL = dict(K=6, n=8, M=3, eval_every=2, eval_episodes=10, seed=11)
GRID = {"kind": "grid", "width": 9, "height": 3, "start": [4, 1],
        "goals": [[[0, 1], 10.0], [[8, 1], 12.0]], "max_steps": 30, "gamma": 0.99}


def safe_path_policy(env):
    probs = np.full((env.n_states, 4), 0.25)
    s = env.state_of(env.start)
    nxt = env.next_state_table()
    for a in env.safe_path_actions():
        probs[s] = np.eye(4)[a]
        s = int(nxt[s, a])
    return TablePolicy(probs)


@pytest.mark.parametrize("method", ["mg_reinforce", "reinforce", "mvo", "tamar", "mvp"])
def test_maze_runs_are_reproducible(method):
    cfg = TrainConfig(method=method, lr_policy=1e-3, lam=0.5, **SMALL)
    a, b = train(cfg)[1].to_csv(), train(cfg)[1].to_csv()
    assert a == b
    assert a.splitlines()[0] == ",".join(METRIC_COLUMNS)


@pytest.mark.parametrize("method", ["mg_ppo", "ppo"])
def test_grid_runs_are_reproducible(method):
    cfg = TrainConfig(method=method, env=GRID, lr_policy=1e-2, lr_value=0.1, **SMALL)
    assert train(cfg)[1].to_csv() == train(cfg)[1].to_csv()


def test_different_seeds_differ():
    a = train(TrainConfig(**{**SMALL, "seed": 1}))[1].to_csv()
    b = train(TrainConfig(**{**SMALL, "seed": 2}))[1].to_csv()
    assert a != b


@pytest.mark.parametrize("method", ["mg_reinforce", "mvo", "tamar", "mvp", "mg_ppo"])
def test_metric_rows_are_sane_and_budget_is_k_times_n(method):
    env = GRID if method == "mg_ppo" else {"kind": "maze"}
    cfg = TrainConfig(method=method, env=env, lr_policy=1e-3, lam=0.5, **SMALL)
    metrics = train(cfg)[1]
    for row in metrics.rows:
        assert row["return_variance"] >= 0 and row["return_gd"] >= 0
        assert row["return_gd"] <= np.sqrt(row["return_variance"]) / np.sqrt(3) * (1 + 1e-9) + 1e-12
        assert 0 <= row["optimal_risk_rate"] <= 1 and 0 <= row["noisy_visit_rate"] <= 1
    assert metrics.column("episode").tolist() == [16, 32, 48]
    assert metrics.rows[-1]["episode"] == cfg.K * cfg.n


def test_final_iteration_is_always_evaluated():
    metrics = train(TrainConfig(**{**SMALL, "K": 5}))[1]
    assert metrics.column("episode").tolist() == [16, 32, 40]


def test_mvpi_run_records_each_iteration():
    cfg = TrainConfig(method="mvpi", lam=0.2, mvpi_iterations=2, mvpi_inner_episodes=20,
                      mvpi_eval_episodes=5, eval_episodes=5)
    metrics = train(cfg)[1]
    assert metrics.column("episode").tolist() == [20, 40]


def test_zero_lambda_matches_reinforce():
    mg = train(TrainConfig(method="mg_reinforce", lam=0.0, **SMALL))[1]
    plain = train(TrainConfig(method="reinforce", lam=0.0, **SMALL))[1]
    assert mg.to_csv() == plain.to_csv()


def test_evaluate_safe_path_policy():
    env = GuardedMaze(goal_reward=20.0)
    row = evaluate(safe_path_policy(env), env, 10, seed=0)
    assert row["mean_return"] == pytest.approx(safe_path_return(GuardedMazeConfig()), abs=1e-9)
    assert row["mean_return"] == pytest.approx(9.85, abs=0.01)
    assert row["return_gd"] == pytest.approx(0.0, abs=1e-12)
    assert row["return_variance"] == pytest.approx(0.0, abs=1e-12)
    assert row["optimal_risk_rate"] == 1.0 and row["noisy_visit_rate"] == 0.0


def test_evaluate_counts_noisy_steps():
    env = NoisyRegionGrid()
    probs = np.zeros((env.n_states, 4))
    probs[:, 3] = 1.0
    row = evaluate(TablePolicy(probs), env, 5, seed=0)
    # four moves right from x=4: x=5,6,7 are in the region and so is the goal x=8
    assert row["noisy_visit_rate"] == 1.0 and row["optimal_risk_rate"] == 0.0
    with pytest.raises(ValueError):
        evaluate(TablePolicy(probs), env, 0, seed=0)


@pytest.mark.parametrize("bad", [
    {"method": "sarsa"}, {"K": 0}, {"lr_policy": 0.0}, {"lam": -1.0}, {"method": "mvo", "n": 2},
    {"method": "mvp", "lam": 0.0}, {"method": "mg_ppo", "zeta": 0.0}, {"method": "mg_ppo", "lambda_gae": 2.0},
    {"method": "tamar", "lr_stats": 1e-6}, {"delta": 0.0}, {"env": {"kind": "maze", "goal": [9, 9]}},
    {"env": {"kind": "maze", "colour": "red"}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_from_toml(tmp_path):
    env_file = tmp_path / "grid.toml"
    env_file.write_text('[env]\nkind = "grid"\nnoise_scale = 5.0\n', encoding="utf-8")
    path = tmp_path / "run.toml"
    path.write_text('env = "grid.toml"\n[train]\nmethod = "mg_ppo"\nlambda = 0.8\nK = 3\n', encoding="utf-8")
    cfg = TrainConfig.from_toml(path)
    assert cfg.lam == 0.8 and cfg.K == 3 and cfg.env["noise_scale"] == 5.0
    path.write_text('[train]\nmethod = "mg_ppo"\nbogus = 1\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_toml(path)


def test_run_metrics_csv(tmp_path):
    m = RunMetrics()
    m.add({c: 0.1 for c in METRIC_COLUMNS} | {"episode": 5})
    m.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text(encoding="utf-8").splitlines()
    assert lines[1].startswith("5,0.1,")
    assert m.final("mean_return") == 0.1
