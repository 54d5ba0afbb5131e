"""Episode records, batches of them, and rollouts under a fixed action table."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rewards_to_go(rewards, gamma: float) -> np.ndarray:
    """``g_t = sum_{t' >= t} gamma^(t'-t) r_t'``."""
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class Trajectory:
    """
    One episode. ``logp_old`` holds the per-step log-probabilities of the
    behaviour policy that generated it.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    gamma: float
    logp_old: np.ndarray
    visited_red: bool = False
    reached_goal: bool = False
    noisy_steps: int = 0
    noise_exposure: float = 0.0
    final_x: float = 0.0
    next_states: np.ndarray | None = None
    return_value: float = field(init=False)
    rtg: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.intp)
        self.actions = np.asarray(self.actions, dtype=np.intp)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.logp_old = np.asarray(self.logp_old, dtype=float)
        if self.states.size < 1:
            raise ValueError("Trajectory: needs at least one step")
        if not (self.states.size == self.actions.size == self.rewards.size == self.logp_old.size):
            raise ValueError("Trajectory: step arrays must be aligned")
        self.rtg = rewards_to_go(self.rewards, self.gamma)
        self.return_value = float(self.rtg[0])

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def log_prob_old(self) -> float:
        return float(self.logp_old.sum())

    @property
    def optimal(self) -> bool:
        """Reached a goal without touching the red cell or the noisy region."""
        return self.reached_goal and not self.visited_red and self.noisy_steps == 0


class TrajectoryBatch:
    """Trajectories plus flattened step arrays; order is preserved unless :meth:`sorted`."""

    def __init__(self, trajectories, is_sorted: bool = False):
        self.trajectories = list(trajectories)
        if not self.trajectories:
            raise ValueError("TrajectoryBatch: empty batch")
        trajs = self.trajectories
        self.returns = np.array([t.return_value for t in trajs])
        self.lengths = np.array([len(t) for t in trajs])
        self.traj_index = np.repeat(np.arange(len(trajs)), self.lengths)
        self.states = np.concatenate([t.states for t in trajs])
        self.actions = np.concatenate([t.actions for t in trajs])
        self.rtg = np.concatenate([t.rtg for t in trajs])
        self.logp_old = np.concatenate([t.logp_old for t in trajs])
        self.logp_old_sum = np.bincount(self.traj_index, weights=self.logp_old, minlength=len(trajs))
        self.is_sorted = is_sorted
        if is_sorted and np.any(np.diff(self.returns) < 0):
            raise ValueError("TrajectoryBatch: returns are not sorted")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def total_steps(self) -> int:
        return int(self.lengths.sum())

    def order(self) -> np.ndarray:
        """Indices sorting returns ascending; ties keep collection order."""
        return np.argsort(self.returns, kind="stable")

    def sorted(self) -> "TrajectoryBatch":
        return TrajectoryBatch([self.trajectories[i] for i in self.order()], is_sorted=True)

    def subset(self, idx) -> "TrajectoryBatch":
        return TrajectoryBatch([self.trajectories[i] for i in idx], is_sorted=self.is_sorted)

    def per_step(self, per_traj: np.ndarray) -> np.ndarray:
        return np.asarray(per_traj)[self.traj_index]


def sample_action(cdf_row, u: float) -> int:
    for a, c in enumerate(cdf_row):
        if u < c:
            return a
    return len(cdf_row) - 1


def rollout(env, probs: np.ndarray, rng: np.random.Generator, logp: np.ndarray | None = None) -> Trajectory:
    """Run one episode sampling actions from the ``(n_states, n_actions)`` table ``probs``."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    cdf_rows = cdf.tolist()
    if logp is None:
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
    logp_rows = logp.tolist()
    state = env.reset(rng)
    states, actions, rewards, lps, nexts = [], [], [], [], []
    visited_red = reached = False
    noisy = 0
    exposure = 0.0
    x = 0.0
    t = 0
    uniform = rng.random
    while True:
        a = sample_action(cdf_rows[state], uniform())
        res = env.step(state, a, rng, t)
        states.append(state)
        actions.append(a)
        rewards.append(res.reward)
        lps.append(logp_rows[state][a])
        nexts.append(res.next_state)
        info = res.info
        visited_red |= info["visited_red"]
        if info["in_noisy_region"]:
            noisy += 1
            exposure += info.get("noise_std", 0.0)
        x = info["x_position"]
        state = res.next_state
        t += 1
        if res.done:
            reached = info["reached_goal"]
            break
    return Trajectory(states, actions, rewards, env.gamma, lps, visited_red=visited_red,
                      reached_goal=reached, noisy_steps=noisy, noise_exposure=exposure,
                      final_x=x, next_states=np.asarray(nexts, dtype=np.intp))
