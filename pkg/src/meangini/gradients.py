"""
Sampled Gini-deviation policy gradient and the mean-return carriers.

The GD term weights each trajectory's score by ``eta_i``, the area under the
shifted step CDF built from the sorted batch returns. With importance ratios
``rho`` it reads ``(1/(n-1)) sum_{i<n} rho_i eta_i sum_t grad log pi``; this is an
estimate of ``-grad D[G0]``, so callers add it with coefficient ``+lambda``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory import TrajectoryBatch


def eta_weights(returns) -> np.ndarray:
    """
    ``eta_i = sum_{j=i}^{n-1} (2j/n)(R_{j+1} - R_j) - (R_n - R_i)`` for ``i = 1..n-1``.

    ``returns`` must be sorted ascending.
    """
    r = np.asarray(returns, dtype=float)
    n = r.size
    if n < 2:
        raise ValueError("eta_weights: insufficient trajectories (need n >= 2)")
    if np.any(np.diff(r) < 0):
        raise ValueError("eta_weights: returns must be sorted ascending")
    j = np.arange(1, n)
    steps = (2.0 * j / n) * np.diff(r)
    tail = np.cumsum(steps[::-1])[::-1]
    return tail - (r[-1] - r[:-1])


def gd_gradient_term(batch: TrajectoryBatch, rho, policy, probs=None) -> np.ndarray:
    """``(1/(n-1)) sum_{i=1}^{n-1} rho_i eta_i sum_t grad log pi(a_it|s_it)`` on a sorted batch."""
    if not batch.is_sorted:
        raise ValueError("gd_gradient_term: batch must be sorted by return")
    rho = np.asarray(rho, dtype=float)
    if rho.size != batch.n:
        raise ValueError("gd_gradient_term: rho length does not match batch size")
    eta = eta_weights(batch.returns)
    coef = np.zeros(batch.n)
    coef[:-1] = rho[:-1] * eta / (batch.n - 1)
    return policy.score_sum(batch.states, batch.actions, batch.per_step(coef), probs)


def is_ratios(batch: TrajectoryBatch, policy, log_probs=None) -> np.ndarray:
    """Trajectory ratios ``prod_t pi(a|s) / pi_old(a|s)`` via summed log-probabilities."""
    if log_probs is None:
        log_probs = policy.log_probs_table()
    new = np.bincount(batch.traj_index, weights=log_probs[batch.states, batch.actions], minlength=batch.n)
    with np.errstate(over="ignore"):
        rho = np.exp(new - batch.logp_old_sum)
    if not np.all(np.isfinite(rho)):
        raise ValueError("is_ratios: non-finite importance ratio")
    return rho


@dataclass(frozen=True)
class ISConfig:
    """Ratio window ``[1-delta, 1+delta]`` with early stop below ``beta*n``, or clipping at ``zeta``."""

    mode: str = "window"
    delta: float = 0.5
    beta: float = 0.6
    zeta: float = 1.0

    def __post_init__(self):
        if self.mode not in ("window", "clip"):
            raise ValueError(f"ISConfig: unknown mode {self.mode!r}")
        if self.mode == "window" and not (self.delta > 0 and 0 < self.beta < 1):
            raise ValueError("ISConfig: window mode needs delta > 0 and beta in (0, 1)")
        if self.mode == "clip" and not self.zeta > 0:
            raise ValueError("ISConfig: clip mode needs zeta > 0")


def apply_is_strategy(batch: TrajectoryBatch, rho, cfg: ISConfig):
    """
    Returns ``(batch, rho, keep_going)``.

    Window mode keeps trajectories whose ratio lies in the window (re-sorted by
    return) and signals a stop once fewer than ``beta * n`` survive. Clip mode
    keeps everything with ratios capped at ``zeta``.
    """
    rho = np.asarray(rho, dtype=float)
    if cfg.mode == "clip":
        return batch, np.minimum(rho, cfg.zeta), True
    keep = np.flatnonzero((rho >= 1.0 - cfg.delta) & (rho <= 1.0 + cfg.delta))
    keep_going = keep.size >= cfg.beta * batch.n
    if keep.size == 0:
        return None, rho[keep], False
    keep = keep[np.argsort(batch.returns[keep], kind="stable")]
    sub = TrajectoryBatch([batch.trajectories[i] for i in keep], is_sorted=True)
    return sub, rho[keep], keep_going


def reinforce_mean_term(batch: TrajectoryBatch, rho, policy, value=None, baselines=None, probs=None) -> np.ndarray:
    """
    ``(1/n) sum_i rho_i sum_t grad log pi(a_it|s_it) (g_it - V(s_it))``.

    ``baselines`` overrides the per-step ``V(s_it)`` values; with neither it is zero.
    """
    rho = np.asarray(rho, dtype=float)
    if baselines is None:
        baselines = value.table()[batch.states] if value is not None else 0.0
    weights = batch.per_step(rho) * (batch.rtg - baselines) / batch.n
    return policy.score_sum(batch.states, batch.actions, weights, probs)


def ppo_clip_mean_term(batch: TrajectoryBatch, advantages, epsilon: float, policy, log_probs=None) -> np.ndarray:
    """
    ``(1/n) sum_i sum_t grad min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)`` with
    per-step ratios ``r_t`` against the stored behaviour log-probabilities.
    """
    if epsilon <= 0:
        raise ValueError("ppo_clip_mean_term: epsilon must be positive")
    if log_probs is None:
        log_probs = policy.log_probs_table()
    adv = np.asarray(advantages, dtype=float)
    ratio = np.exp(log_probs[batch.states, batch.actions] - batch.logp_old)
    clipped = ((adv > 0) & (ratio > 1.0 + epsilon)) | ((adv < 0) & (ratio < 1.0 - epsilon))
    weights = np.where(clipped, 0.0, ratio * adv) / batch.n
    return policy.score_sum(batch.states, batch.actions, weights, np.exp(log_probs))


def compute_gae(rewards, values, gamma: float, lambda_gae: float, bootstrap: float = 0.0) -> np.ndarray:
    """
    ``A_t = sum_k (gamma lambda)^k delta_{t+k}``, ``delta_t = r_t + gamma V(s_{t+1}) - V(s_t)``.

    ``values`` are ``V(s_t)`` along the trajectory; the value after the last
    step is ``bootstrap`` (0 for terminal episodes).
    """
    if not 0.0 <= lambda_gae <= 1.0:
        raise ValueError("compute_gae: lambda_gae must lie in [0, 1]")
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    v_next = np.append(v[1:], bootstrap)
    delta = r + gamma * v_next - v
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(delta.size - 1, -1, -1):
        acc = delta[t] + gamma * lambda_gae * acc
        adv[t] = acc
    return adv
