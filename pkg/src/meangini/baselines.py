"""
Variance-based comparison methods.

MVO uses double sampling on two halves of a batch; Tamar and MVP take one
stochastic gradient step of their penalized / Fenchel-dual objectives per
episode; tabular MVPI alternates the closed-form dual variable with
Q-learning on modified rewards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import make_rng
from .oracle import mvpi_reward_modification
from .policies import TablePolicy
from .trajectory import TrajectoryBatch, rollout


def _halves(batch: TrajectoryBatch):
    n = batch.n
    if n < 4 or n % 2:
        raise ValueError(f"mvo_gradient: need an even batch of at least 4 trajectories, got {n}")
    return np.arange(n // 2), np.arange(n // 2, n)


def _double_sampling_parts(batch, policy, rho, probs):
    rho = np.ones(batch.n) if rho is None else np.asarray(rho, dtype=float)
    half_a, half_b = _halves(batch)
    R = batch.returns
    j_a = float(np.mean(rho[half_a] * R[half_a]))
    in_b = np.zeros(batch.n)
    in_b[half_b] = rho[half_b] / half_b.size
    step_w = batch.per_step(in_b * R)
    grad_j = policy.score_sum(batch.states, batch.actions, step_w, probs)
    grad_m = policy.score_sum(batch.states, batch.actions, batch.per_step(in_b * R * R), probs)
    return j_a, grad_j, grad_m


def mvo_variance_term(batch: TrajectoryBatch, policy, rho=None, probs=None) -> np.ndarray:
    """
    ``grad M - 2 J grad J``: ``J`` from the first half of the batch (collection
    order), ``grad J = E[R w]`` and ``grad M = E[R^2 w]`` from the second half.
    """
    j_a, grad_j, grad_m = _double_sampling_parts(batch, policy, rho, probs)
    return grad_m - 2.0 * j_a * grad_j


def mvo_gradient(batch: TrajectoryBatch, lam: float, policy, rho=None, probs=None) -> np.ndarray:
    """``grad J - lambda (grad M - 2 J grad J)`` estimated by double sampling."""
    j_a, grad_j, grad_m = _double_sampling_parts(batch, policy, rho, probs)
    return grad_j - lam * (grad_m - 2.0 * j_a * grad_j)


@dataclass(frozen=True)
class TamarState:
    J_hat: float = 0.0
    V_hat: float = 0.0
    b_threshold: float = 50.0
    lam: float = 0.1


def tamar_update(state: TamarState, traj, policy, lr_policy: float, lr_stats: float):
    """
    One episode of the two-timescale penalized update of
    ``E[G0] - lambda max(0, V[G0] - b)^2``; statistics and parameters step
    from the pre-update estimates.
    """
    if not lr_stats > lr_policy > 0:
        raise ValueError("tamar_update: need lr_stats > lr_policy > 0")
    R = traj.return_value
    J, V = state.J_hat, state.V_hat
    coef = R - 2.0 * state.lam * max(0.0, V - state.b_threshold) * (R * R - 2.0 * J * R)
    new_policy = policy
    if coef != 0.0:
        omega = policy.score_sum(traj.states, traj.actions)
        new_policy = policy.with_theta(policy.theta + lr_policy * coef * omega)
    new_state = replace(state, J_hat=J + lr_stats * (R - J), V_hat=V + lr_stats * (R * R - J * J - V))
    return new_state, new_policy


@dataclass(frozen=True)
class MVPState:
    y: float = 0.0
    lam: float = 0.1


def mvp_update(state: MVPState, traj, policy, lr: float):
    """
    Stochastic ascent on ``2y(E[G0] + 1/(2 lambda)) - y^2 - E[G0^2]`` in
    ``(theta, y)`` from one episode, both using the current ``y``.
    """
    if state.lam == 0:
        raise ValueError("mvp_update: lambda must be non-zero")
    if lr <= 0:
        raise ValueError("mvp_update: lr must be positive")
    R = traj.return_value
    shift = R + 1.0 / (2.0 * state.lam)
    coef = 2.0 * state.y * shift - R * R
    new_policy = policy
    if coef != 0.0:
        omega = policy.score_sum(traj.states, traj.actions)
        new_policy = policy.with_theta(policy.theta + lr * coef * omega)
    return replace(state, y=state.y + lr * (2.0 * shift - 2.0 * state.y)), new_policy


@dataclass
class MVPIIteration:
    y: float
    q_table: np.ndarray
    policy: TablePolicy
    mean_return: float
    episodes: int


def _greedy_return(env, policy: TablePolicy, episodes: int, seed: int, k: int) -> float:
    probs = policy.probs_table()
    return float(np.mean([rollout(env, probs, make_rng(seed, "mvpi-y", k, i)).return_value
                          for i in range(episodes)]))


def q_learning(env, q: np.ndarray, reward_fn, episodes: int, lr: float, rng: np.random.Generator,
               eps_start: float = 0.1, eps_end: float = 0.01) -> np.ndarray:
    """
    Tabular Q-learning with linearly decayed epsilon-greedy exploration.

    Goal arrivals and the step limit both end an episode without bootstrapping.
    """
    q = q.copy()
    gamma = env.gamma
    n_actions = q.shape[1]
    for ep in range(episodes):
        eps = eps_start + (eps_end - eps_start) * ep / max(episodes - 1, 1)
        s = env.reset(rng)
        t = 0
        while True:
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                row = q[s]
                a = int(np.argmax(row))
            res = env.step(s, a, rng, t)
            r = reward_fn(res.reward)
            target = r if res.done else r + gamma * q[res.next_state].max()
            q[s, a] += lr * (target - q[s, a])
            s = res.next_state
            t += 1
            if res.done:
                break
    return q


def mvpi_tabular(env, lam: float, q_lr: float, iterations: int, inner_episodes: int = 2000,
                 eval_episodes: int = 1000, seed: int = 0, gamma: float | None = None) -> list:
    """
    Mean-variance policy iteration with a Q-learning inner solver.

    Each outer step sets ``y = (1 - gamma) E[G0]`` of the current greedy policy
    (Monte Carlo, exploration off), then runs Q-learning on
    ``r - lambda r^2 + 2 lambda r y``. Returns one record per outer step.
    """
    gamma = env.gamma if gamma is None else gamma
    init_rng = make_rng(seed, "mvpi-init")
    q = init_rng.uniform(-1e-3, 1e-3, size=(env.n_states, env.n_actions))
    history = []
    total = 0
    for k in range(iterations):
        policy = TablePolicy.greedy(q)
        mean_ret = _greedy_return(env, policy, eval_episodes, seed, k)
        y = (1.0 - gamma) * mean_ret
        q = q_learning(env, q, lambda r: mvpi_reward_modification(r, y, lam), inner_episodes,
                       q_lr, make_rng(seed, "mvpi-q", k))
        total += inner_episodes
        history.append(MVPIIteration(y, q.copy(), TablePolicy.greedy(q), mean_ret, total))
    return history
