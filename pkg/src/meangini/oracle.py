"""
Exact ground truth for small MDPs.

Return distributions are enumerated over the action / next-state /
reward-outcome tree, carrying each node's probability gradient ``grad p``
alongside ``p`` so that mean, variance and Gini-deviation gradients follow
exactly from the atoms. Partial paths that reach the same state with the same
return are merged on the way, which keeps chain-like MDPs tractable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .risk_measures import CategoricalDist, exact_gd, exact_mean, exact_variance, merge_sorted_atoms

MAX_NODES = 10**7
PRUNE_BELOW = 1e-15


@dataclass
class SmallMDP:
    """
    Finite MDP for exhaustive enumeration.

    ``transition[s, a, s']`` are next-state probabilities, ``rewards[s][a]`` a
    :class:`CategoricalDist` for the reward of taking ``a`` in ``s``. Episodes end
    after ``horizon`` steps or on entering a state in ``terminal``.
    """

    transition: np.ndarray
    rewards: Sequence[Sequence[CategoricalDist]]
    start_dist: np.ndarray
    gamma: float = 1.0
    horizon: int = 1
    terminal: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.start_dist = np.asarray(self.start_dist, dtype=float)
        n_s, n_a, n_s2 = self.transition.shape
        if n_s != n_s2 or self.start_dist.size != n_s:
            raise ValueError("SmallMDP: inconsistent state dimensions")
        if not np.allclose(self.transition.sum(axis=2), 1.0, atol=1e-12, rtol=0):
            raise ValueError("SmallMDP: transition rows must sum to 1")
        if abs(self.start_dist.sum() - 1.0) > 1e-12:
            raise ValueError("SmallMDP: start distribution must sum to 1")
        if len(self.rewards) != n_s or any(len(row) != n_a for row in self.rewards):
            raise ValueError("SmallMDP: rewards must be indexed [state][action]")
        if not 0.0 < self.gamma <= 1.0 or self.horizon < 1:
            raise ValueError("SmallMDP: need gamma in (0, 1] and horizon >= 1")
        self.terminal = frozenset(self.terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def bandit_mdp(arm_rewards) -> SmallMDP:
    """One-step bandit; each arm pays a constant or a :class:`CategoricalDist`."""
    dists = [r if isinstance(r, CategoricalDist) else CategoricalDist.point_mass(r) for r in arm_rewards]
    k = len(dists)
    return SmallMDP(np.ones((1, k, 1)), [dists], np.ones(1), gamma=1.0, horizon=1)


def random_small_mdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2,
                     horizon: int = 3, n_outcomes: int = 2, gamma: float = 0.9) -> SmallMDP:
    """Random dense MDP with integer-valued reward lotteries (ties across paths are common)."""
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = []
    for _ in range(n_states):
        row = []
        for _ in range(n_actions):
            k = int(rng.integers(1, n_outcomes + 1))
            vals = rng.choice(np.arange(-5, 6), size=k, replace=False).astype(float)
            probs = rng.dirichlet(np.ones(k))
            probs[-1] = 1.0 - probs[:-1].sum()
            row.append(CategoricalDist.from_atoms(vals, probs))
        rewards.append(row)
    return SmallMDP(trans, rewards, rng.dirichlet(np.ones(n_states)), gamma=gamma, horizon=horizon)


@dataclass
class ReturnAtoms:
    """Exact return distribution with the gradient of every atom probability."""

    dist: CategoricalDist
    prob_grads: np.ndarray  # (n_atoms, dim)


def _merge_nodes(state, ret, prob, grad, tol=1e-12):
    order = np.lexsort((ret, state))
    state, ret, prob, grad = state[order], ret[order], prob[order], grad[order]
    same_state = np.concatenate(([False], state[1:] == state[:-1]))
    close = np.concatenate(([False], np.abs(np.diff(ret)) <= tol * np.maximum(1.0, np.abs(ret[1:]))))
    starts = ~(same_state & close)
    group = np.cumsum(starts) - 1
    n = int(group[-1]) + 1 if group.size else 0
    m_prob = np.bincount(group, weights=prob, minlength=n)
    m_grad = np.zeros((n, grad.shape[1]))
    np.add.at(m_grad, group, grad)
    return state[starts], ret[starts], m_prob, m_grad


def enumerate_with_gradients(mdp: SmallMDP, policy) -> ReturnAtoms:
    """Exact distribution of ``sum_t gamma^t r_t`` and ``d P(atom) / d theta`` per atom."""
    probs = policy.probs_table()
    dim = policy.dim
    glp = np.stack([[policy.grad_log_prob(s, a) for a in range(mdp.n_actions)]
                    for s in range(mdp.n_states)])  # (S, A, d)

    state = np.flatnonzero(mdp.start_dist > 0)
    prob = mdp.start_dist[state]
    ret = np.zeros(state.size)
    grad = np.zeros((state.size, dim))
    done_ret, done_prob, done_grad = [], [], []
    discount = 1.0
    for t in range(mdp.horizon):
        n_state, n_ret, n_prob, n_grad = [], [], [], []
        count = 0
        for a in range(mdp.n_actions):
            pa = probs[state, a]
            for s in np.unique(state):
                rows = np.flatnonzero(state == s)
                rdist = mdp.rewards[s][a]
                nexts = np.flatnonzero(mdp.transition[s, a] > 0)
                for v, q in zip(rdist.values, rdist.probs):
                    for s2 in nexts:
                        w = pa[rows] * q * mdp.transition[s, a, s2]
                        p_new = prob[rows] * w
                        g_new = grad[rows] * w[:, None] + p_new[:, None] * glp[s, a]
                        n_state.append(np.full(rows.size, s2))
                        n_ret.append(ret[rows] + discount * v)
                        n_prob.append(p_new)
                        n_grad.append(g_new)
                        count += rows.size
                        if count > MAX_NODES:
                            raise ValueError("enumerate_return_distribution: enumeration too large")
        state = np.concatenate(n_state)
        ret = np.concatenate(n_ret)
        prob = np.concatenate(n_prob)
        grad = np.concatenate(n_grad)
        keep = prob >= PRUNE_BELOW
        state, ret, prob, grad = state[keep], ret[keep], prob[keep], grad[keep]
        discount *= mdp.gamma
        finished = np.isin(state, list(mdp.terminal)) if mdp.terminal else np.zeros(state.size, bool)
        if t == mdp.horizon - 1:
            finished[:] = True
        if finished.any():
            done_ret.append(ret[finished])
            done_prob.append(prob[finished])
            done_grad.append(grad[finished])
        live = ~finished
        state, ret, prob, grad = state[live], ret[live], prob[live], grad[live]
        if state.size == 0:
            break
        state, ret, prob, grad = _merge_nodes(state, ret, prob, grad)

    ret = np.concatenate(done_ret)
    prob = np.concatenate(done_prob)
    grad = np.concatenate(done_grad)
    order = np.argsort(ret, kind="stable")
    ret, prob, grad = ret[order], prob[order], grad[order]
    values, merged_p = merge_sorted_atoms(ret, prob)
    scale = np.maximum(1.0, np.abs(ret[1:]))
    starts = np.concatenate(([True], np.diff(ret) > 1e-12 * scale))
    group = np.cumsum(starts) - 1
    grads = np.zeros((values.size, dim))
    np.add.at(grads, group, grad)
    total = merged_p.sum()
    if abs(total - 1.0) > 1e-12:
        merged_p = merged_p / total
    return ReturnAtoms(CategoricalDist(values, merged_p), grads)


def enumerate_return_distribution(mdp: SmallMDP, policy) -> CategoricalDist:
    """Exact return distribution of ``mdp`` under ``policy``."""
    return enumerate_with_gradients(mdp, policy).dist


def analytic_mean_gradient(mdp: SmallMDP, policy) -> np.ndarray:
    atoms = enumerate_with_gradients(mdp, policy)
    return atoms.prob_grads.T @ atoms.dist.values


def analytic_variance_gradient(mdp: SmallMDP, policy) -> np.ndarray:
    atoms = enumerate_with_gradients(mdp, policy)
    v = atoms.dist.values
    grad_mean = atoms.prob_grads.T @ v
    grad_second = atoms.prob_grads.T @ (v * v)
    return grad_second - 2.0 * exact_mean(atoms.dist) * grad_mean


def analytic_gd_gradient(mdp: SmallMDP, policy) -> np.ndarray:
    """
    ``grad (1/2) sum_ij p_i p_j |R_i - R_j| = sum_i grad p_i sum_j p_j |R_i - R_j|``
    over the merged atoms.
    """
    atoms = enumerate_with_gradients(mdp, policy)
    v, p = atoms.dist.values, atoms.dist.probs
    below_mass = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    below_moment = np.concatenate(([0.0], np.cumsum(p * v)[:-1]))
    above_mass = 1.0 - below_mass - p
    above_moment = (p * v).sum() - below_moment - p * v
    spread = v * below_mass - below_moment + above_moment - v * above_mass
    return atoms.prob_grads.T @ spread


def finite_difference(fn: Callable[[np.ndarray], float], theta, step: float = 1e-5) -> np.ndarray:
    """Central differences ``(fn(theta + h e_k) - fn(theta - h e_k)) / 2h`` per coordinate."""
    if step <= 0:
        raise ValueError("finite_difference: step must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        hi, lo = fn(theta + e), fn(theta - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("finite_difference: non-finite function value")
        grad[k] = (hi - lo) / (2.0 * step)
    return grad


def exact_measure(mdp: SmallMDP, policy, measure: str = "gd") -> float:
    dist = enumerate_return_distribution(mdp, policy)
    return {"gd": exact_gd, "mean": exact_mean, "variance": exact_variance}[measure](dist)


def sample_returns(mdp: SmallMDP, policy, n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo returns of ``n`` independent episodes, simulated in lock-step."""
    probs = policy.probs_table()
    state = rng.choice(mdp.n_states, size=n, p=mdp.start_dist)
    ret = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    discount = 1.0
    act_cdf = np.cumsum(probs, axis=1)
    trans_cdf = np.cumsum(mdp.transition, axis=2)
    for _ in range(mdp.horizon):
        a = (rng.random(n)[:, None] >= act_cdf[state]).sum(axis=1)
        a = np.minimum(a, mdp.n_actions - 1)
        r = np.zeros(n)
        u = rng.random(n)
        for s in range(mdp.n_states):
            for b in range(mdp.n_actions):
                m = (state == s) & (a == b)
                if m.any():
                    d = mdp.rewards[s][b]
                    idx = np.minimum(np.searchsorted(np.cumsum(d.probs), u[m], side="right"), d.values.size - 1)
                    r[m] = d.values[idx]
        ret += np.where(alive, discount * r, 0.0)
        nxt = (rng.random(n)[:, None] >= trans_cdf[state, a]).sum(axis=1)
        state = np.minimum(nxt, mdp.n_states - 1)
        if mdp.terminal:
            alive &= ~np.isin(state, list(mdp.terminal))
        discount *= mdp.gamma
        if not alive.any():
            break
    return ret


def mvpi_reward_modification(r, y: float, lam: float):
    """``r - lambda r^2 + 2 lambda r y``."""
    if isinstance(r, (int, float)):
        return r - lam * r * r + 2.0 * lam * r * y
    r = np.asarray(r, dtype=float)
    out = r - lam * r * r + 2.0 * lam * r * y
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MVPIMazeAnalysis:
    y: float
    modified_goal: float
    modified_red_values: tuple
    modified_red_mean: float
    random_walk_return: float
    safe_path_return: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def mvpi_maze_analysis(goal_reward: float = 20.0, lam: float = 0.2, gamma: float = 0.999,
                       max_len: int = 100, red_values=(-15.0, -1.0, 13.0),
                       red_probs=(0.4, 0.2, 0.4), step_reward: float = -1.0) -> MVPIMazeAnalysis:
    """
    First MVPI iteration on the maze from a random policy.

    The dual variable is ``(1 - gamma)`` times the random-walk return of a
    ``max_len``-step episode of step penalties; the goal and red rewards are then
    modified and the safe path re-valued with the modified goal.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("mvpi_maze_analysis: gamma must lie in (0, 1)")
    disc = gamma ** np.arange(max_len)
    walk = float(np.sum(disc * step_reward))
    y = (1.0 - gamma) * walk
    goal = mvpi_reward_modification(goal_reward, y, lam)
    red = mvpi_reward_modification(np.asarray(red_values, dtype=float), y, lam)
    red_mean = float(np.dot(red, red_probs))
    safe = float(np.sum(gamma ** np.arange(10) * step_reward) + gamma ** 10 * goal)
    return MVPIMazeAnalysis(y, goal, tuple(float(v) for v in red), red_mean, walk, safe)
