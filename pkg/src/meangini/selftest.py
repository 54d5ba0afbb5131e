"""
Fast invariant checks bundled with the package and exposed as ``meangini selftest``.

Each check returns ``(name, ok, detail)``; none of them needs pytest.
"""

from __future__ import annotations

import numpy as np

from . import oracle
from .envs import GuardedMaze, GuardedMazeConfig, make_rng, safe_path_reward_variance
from .harness import TrainConfig, train
from .policies import SoftmaxPolicy
from .risk_measures import CategoricalDist, exact_gd, exact_variance, gd_pairwise, gd_quantile


def check_estimators(rng) -> tuple:
    worst = 0.0
    for _ in range(200):
        x = rng.normal(size=int(rng.integers(2, 65))) * rng.uniform(0.1, 10)
        worst = max(worst, abs(gd_quantile(x) - gd_pairwise(x)))
    exact = abs(gd_quantile([1.0, 2.0, 3.0]) - 4.0 / 9.0)
    return "quantile and pairwise GD agree", worst < 1e-10 and exact < 1e-15, f"max gap {worst:.2e}"


def check_gd_properties(rng) -> tuple:
    bad = 0
    for _ in range(200):
        x = rng.normal(size=int(rng.integers(2, 40)))
        c, b = rng.uniform(0.1, 5), rng.normal() * 10
        if abs(gd_pairwise(c * x + b) - c * gd_pairwise(x)) > 1e-12 * max(1.0, c * gd_pairwise(x)):
            bad += 1
        p = rng.dirichlet(np.ones(x.size))
        d = CategoricalDist.from_atoms(x, p, normalize=True)
        if np.sqrt(exact_variance(d)) < np.sqrt(3.0) * exact_gd(d) * (1 - 1e-12):
            bad += 1
    return "homogeneity, shift invariance, sd >= sqrt(3) GD", bad == 0, f"{bad} violations"


def check_gradient_oracle(rng) -> tuple:
    worst = 0.0
    for _ in range(5):
        mdp = oracle.random_small_mdp(rng, n_states=3, n_actions=2, horizon=3)
        theta = rng.normal(size=mdp.n_states * mdp.n_actions)
        pol = SoftmaxPolicy.tabular(mdp.n_states, mdp.n_actions).with_theta(theta)
        analytic = oracle.analytic_gd_gradient(mdp, pol)
        fd = oracle.finite_difference(lambda t: oracle.exact_measure(mdp, pol.with_theta(t), "gd"), theta)
        worst = max(worst, float(np.max(np.abs(analytic - fd)) / max(1e-8, np.max(np.abs(fd)))))
    return "analytic GD gradient matches finite differences", worst < 1e-5, f"rel err {worst:.1e}"


def check_mvpi_analysis() -> tuple:
    a20 = oracle.mvpi_maze_analysis(20.0)
    a40 = oracle.mvpi_maze_analysis(40.0)
    ok = (abs(a20.y + 0.0952) < 1e-3 and abs(a20.modified_goal + 60.7) < 0.1
          and abs(a40.modified_goal + 281.5) < 0.1 and abs(a20.random_walk_return + 95.2) < 0.1
          and abs(a20.safe_path_return + 70) < 0.5 and abs(a20.modified_red_mean + 32.47) < 0.15)
    return "maze MVPI first-iteration analysis", ok, f"y={a20.y:.4f} goal={a20.modified_goal:.2f}"


def check_reward_variance() -> tuple:
    cfg = GuardedMazeConfig()
    v10 = safe_path_reward_variance(cfg, 10.0)
    v20 = safe_path_reward_variance(cfg, 20.0)
    ok = abs(v10 - 10.0) <= 1.0 and abs(v20 - 36.4) <= 3.64
    return "per-step reward variance on the safe path", ok, f"{v10:.2f} / {v20:.2f}"


def check_determinism() -> tuple:
    cfg = TrainConfig(method="mg_reinforce", env={"kind": "maze"}, K=4, n=8, M=2, eval_every=2,
                      eval_episodes=5, seed=3)
    a = train(cfg)[1].to_csv()
    b = train(cfg)[1].to_csv()
    return "same config and seed give identical metrics", a == b, f"{len(a)} bytes"


def check_env_red_lottery() -> tuple:
    env = GuardedMaze()
    rng = make_rng(0, "selftest")
    left_of_red = env.state_of((1, 0))
    draws = np.array([env.step(left_of_red, 3, rng).reward for _ in range(20000)])
    freq = np.array([(draws == v).mean() for v in (-15.0, -1.0, 13.0)])
    ok = bool(np.all(np.abs(freq - [0.4, 0.2, 0.4]) < 0.02))
    return "red-cell lottery frequencies", ok, np.array2string(freq, precision=3)


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [check_estimators(rng), check_gd_properties(rng), check_gradient_oracle(rng),
            check_mvpi_analysis(), check_reward_variance(), check_env_red_lottery(), check_determinism()]
