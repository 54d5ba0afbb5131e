"""
Training loops, evaluation and metric emission.

Every episode draws from its own Philox stream keyed by
``(seed, purpose, iteration, episode)``, so results do not depend on how
rollouts are scheduled.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines
from .envs import load_env_config, make_env, make_rng, tomllib
from .gradients import (ISConfig, apply_is_strategy, compute_gae, gd_gradient_term, is_ratios,
                        ppo_clip_mean_term, reinforce_mean_term)
from .policies import LinearValue, SoftmaxPolicy
from .risk_measures import gd_pairwise, variance_pairwise
from .trajectory import TrajectoryBatch, rollout

log = logging.getLogger(__name__)

METHODS = ("mg_reinforce", "mg_ppo", "reinforce", "ppo", "mvo", "tamar", "mvp", "mvpi")
METRIC_COLUMNS = ("episode", "mean_return", "return_variance", "return_gd",
                  "optimal_risk_rate", "noisy_visit_rate", "noise_exposure", "mean_final_x")


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class TrainConfig:
    method: str = "mg_reinforce"
    env: dict = field(default_factory=lambda: {"kind": "maze"})
    K: int = 100
    n: int = 50
    M: int = 10
    lr_policy: float = 1e-4
    lr_value: float | None = None
    lam: float = 1.2
    delta: float = 0.5
    beta: float = 0.6
    zeta: float = 1.0
    epsilon_clip: float = 0.2
    lambda_gae: float = 0.95
    entropy_coef: float = 0.01
    max_grad_norm: float | None = None
    gamma: float | None = None
    seed: int = 0
    eval_every: int = 10
    eval_episodes: int = 10
    b_threshold: float = 50.0
    lr_stats: float | None = None
    q_lr: float = 5e-3
    mvpi_iterations: int = 10
    mvpi_inner_episodes: int = 5000
    mvpi_eval_episodes: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        for name in ("K", "n", "M", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr_policy <= 0 or (self.lr_value is not None and self.lr_value <= 0):
            raise ConfigError("learning rates must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.method in ("mg_reinforce", "reinforce", "mvo"):
            try:
                ISConfig("window", self.delta, self.beta)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if self.n < 2:
                raise ConfigError("batch methods need n >= 2")
        if self.method in ("mg_ppo", "ppo"):
            if self.zeta <= 0 or self.epsilon_clip <= 0:
                raise ConfigError("zeta and epsilon_clip must be positive")
            if not 0 <= self.lambda_gae <= 1:
                raise ConfigError("lambda_gae must lie in [0, 1]")
        if self.method == "mvo" and self.n < 4:
            raise ConfigError("mvo needs n >= 4")
        if self.method == "mvp" and self.lam == 0:
            raise ConfigError("mvp needs lam > 0")
        try:
            make_env(self.env)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid env config: {exc}") from exc
        if self.method == "tamar":
            lr_stats = self.lr_stats if self.lr_stats is not None else 100.0 * self.lr_policy
            if not lr_stats > self.lr_policy:
                raise ConfigError("tamar needs lr_stats > lr_policy")

    @property
    def value_lr(self) -> float:
        return self.lr_value if self.lr_value is not None else 100.0 * self.lr_policy

    @property
    def stats_lr(self) -> float:
        return self.lr_stats if self.lr_stats is not None else 100.0 * self.lr_policy

    @classmethod
    def from_mapping(cls, data: dict, base_dir: Path | None = None) -> "TrainConfig":
        data = dict(data)
        train = dict(data.get("train", {}))
        if "lambda" in train:
            train["lam"] = train.pop("lambda")
        env = data.get("env", train.pop("env", {"kind": "maze"}))
        if isinstance(env, str):
            path = Path(env) if base_dir is None else base_dir / env
            env = load_env_config(path)
        known = {f.name for f in fields(cls)}
        unknown = set(train) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(env=dict(env), **train)
        except TypeError as exc:  # pragma: no cover
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path) -> "TrainConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(data, path.parent)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def final(self, name: str, last: int = 1) -> float:
        return float(np.mean(self.column(name)[-last:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow([row["episode"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def evaluate(policy, env, episodes: int, seed: int, tag=0, episode_count: int = 0) -> dict:
    """
    Roll out ``episodes`` episodes with actions sampled from the policy table
    and summarize returns, safe-path rate and noisy-region exposure.
    """
    if episodes < 1:
        raise ValueError("evaluate: episodes must be >= 1")
    probs = policy.probs_table()
    trajs = [rollout(env, probs, make_rng(seed, "eval", tag, i)) for i in range(episodes)]
    returns = np.array([t.return_value for t in trajs])
    steps = sum(len(t) for t in trajs)
    return {
        "episode": int(episode_count),
        "mean_return": float(returns.mean()),
        "return_variance": variance_pairwise(returns),
        "return_gd": gd_pairwise(returns),
        "optimal_risk_rate": float(np.mean([t.optimal for t in trajs])),
        "noisy_visit_rate": float(sum(t.noisy_steps for t in trajs) / steps),
        "noise_exposure": float(sum(t.noise_exposure for t in trajs) / steps),
        "mean_final_x": float(np.mean([t.final_x for t in trajs])),
    }


def _init(cfg: TrainConfig):
    env = make_env(cfg.env)
    policy = SoftmaxPolicy.tabular(env.n_states, env.n_actions)
    value = LinearValue.tabular(env.n_states)
    return env, policy, value


def _collect(env, policy, cfg: TrainConfig, k: int) -> TrajectoryBatch:
    probs = policy.probs_table()
    logp = policy.log_probs_table()
    return TrajectoryBatch([rollout(env, probs, make_rng(cfg.seed, "train", k, i), logp)
                            for i in range(cfg.n)])


def _step(policy, direction: np.ndarray, cfg: TrainConfig):
    if cfg.max_grad_norm is not None:
        norm = float(np.linalg.norm(direction))
        if norm > cfg.max_grad_norm:
            direction = direction * (cfg.max_grad_norm / norm)
    return policy.with_theta(policy.theta + cfg.lr_policy * direction)


def _maybe_eval(metrics, policy, env, cfg, k, episodes_done, force=False):
    if force or (k + 1) % cfg.eval_every == 0:
        metrics.add(evaluate(policy, env, cfg.eval_episodes, cfg.seed, k, episodes_done))


def _interleaved_baselines(batch: TrajectoryBatch, value: LinearValue, lr: float):
    """V(s) along each trajectory taken before that trajectory's value update."""
    parts = []
    for traj in batch.trajectories:
        parts.append(value.table()[traj.states])
        value = value.fit_trajectory(traj.states, traj.rtg, lr)
    return np.concatenate(parts), value


def train_mg_reinforce(cfg: TrainConfig):
    """
    Mean-GD policy gradient with a REINFORCE-with-baseline mean term.

    Each outer iteration samples ``n`` episodes and reuses them for up to
    ``M`` updates, keeping only trajectories whose ratio stays inside the
    window and stopping once fewer than ``beta * n`` remain.
    """
    env, policy, value = _init(cfg)
    is_cfg = ISConfig("window", cfg.delta, cfg.beta)
    lam = 0.0 if cfg.method == "reinforce" else cfg.lam
    metrics = RunMetrics()
    episodes = 0
    for k in range(cfg.K):
        batch = _collect(env, policy, cfg, k)
        episodes += batch.n
        for _ in range(cfg.M):
            probs = policy.probs_table()
            rho = is_ratios(batch, policy, np.log(probs))
            sub, rho_sub, keep_going = apply_is_strategy(batch, rho, is_cfg)
            if not keep_going or sub.n < 2:
                break
            base, value = _interleaved_baselines(sub, value, cfg.value_lr)
            direction = reinforce_mean_term(sub, rho_sub, policy, baselines=base, probs=probs)
            if lam:
                direction = direction + lam * gd_gradient_term(sub, rho_sub, policy, probs)
            policy = _step(policy, direction, cfg)
        _maybe_eval(metrics, policy, env, cfg, k, episodes, force=k == cfg.K - 1 and (k + 1) % cfg.eval_every)
    return policy, metrics


def train_mg_ppo(cfg: TrainConfig):
    """
    Mean-GD policy gradient with a PPO-clip mean term and GAE advantages;
    trajectory ratios for the GD term are clipped at ``zeta``.
    """
    env, policy, value = _init(cfg)
    is_cfg = ISConfig("clip", zeta=cfg.zeta)
    lam = 0.0 if cfg.method == "ppo" else cfg.lam
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    metrics = RunMetrics()
    episodes = 0
    for k in range(cfg.K):
        batch = _collect(env, policy, cfg, k)
        episodes += batch.n
        v_table = value.table()
        adv = np.concatenate([compute_gae(t.rewards, v_table[t.states], gamma, cfg.lambda_gae)
                              for t in batch.trajectories])
        sorted_idx = batch.order()
        sorted_batch = batch.sorted()
        horizon = batch.total_steps / batch.n
        for _ in range(cfg.M):
            probs = policy.probs_table()
            logp = np.log(probs)
            rho = is_ratios(batch, policy, logp)
            _, rho, _ = apply_is_strategy(batch, rho, is_cfg)
            direction = ppo_clip_mean_term(batch, adv, cfg.epsilon_clip, policy, logp) / horizon
            if cfg.entropy_coef:
                direction = direction + cfg.entropy_coef * policy.entropy_grad(batch.states, probs=probs) / batch.total_steps
            for traj in batch.trajectories:
                value = value.fit_trajectory(traj.states, traj.rtg, cfg.value_lr)
            if lam and batch.n >= 2:
                direction = direction + lam * gd_gradient_term(sorted_batch, rho[sorted_idx], policy, probs) / horizon
            policy = _step(policy, direction, cfg)
        _maybe_eval(metrics, policy, env, cfg, k, episodes, force=k == cfg.K - 1 and (k + 1) % cfg.eval_every)
    return policy, metrics


def _train_mvo(cfg: TrainConfig):
    env, policy, value = _init(cfg)
    metrics = RunMetrics()
    episodes = 0
    for k in range(cfg.K):
        batch = _collect(env, policy, cfg, k)
        episodes += batch.n
        for _ in range(cfg.M):
            probs = policy.probs_table()
            rho = is_ratios(batch, policy, np.log(probs))
            keep = np.flatnonzero((rho >= 1 - cfg.delta) & (rho <= 1 + cfg.delta))
            if keep.size < cfg.beta * batch.n or keep.size < 4:
                break
            sub = batch.subset(keep)
            base, value = _interleaved_baselines(sub, value, cfg.value_lr)
            direction = reinforce_mean_term(sub, rho[keep], policy, baselines=base, probs=probs)
            even = keep[: keep.size - keep.size % 2]
            var_term = baselines.mvo_variance_term(batch.subset(even), policy, rho[even], probs)
            policy = _step(policy, direction - cfg.lam * var_term, cfg)
        _maybe_eval(metrics, policy, env, cfg, k, episodes, force=k == cfg.K - 1 and (k + 1) % cfg.eval_every)
    return policy, metrics


def _train_per_episode(cfg: TrainConfig):
    env, policy, _ = _init(cfg)
    if cfg.method == "tamar":
        state = baselines.TamarState(b_threshold=cfg.b_threshold, lam=cfg.lam)
    else:
        state = baselines.MVPState(lam=cfg.lam)
    metrics = RunMetrics()
    episodes = 0
    for k in range(cfg.K):
        for i in range(cfg.n):
            traj = rollout(env, policy.probs_table(), make_rng(cfg.seed, "train", k, i))
            if cfg.method == "tamar":
                state, policy = baselines.tamar_update(state, traj, policy, cfg.lr_policy, cfg.stats_lr)
            else:
                state, policy = baselines.mvp_update(state, traj, policy, cfg.lr_policy)
            if not np.all(np.isfinite(policy.theta)):
                raise FloatingPointError(f"{cfg.method}: parameters diverged")
            episodes += 1
        _maybe_eval(metrics, policy, env, cfg, k, episodes, force=k == cfg.K - 1 and (k + 1) % cfg.eval_every)
    return policy, metrics


def _train_mvpi(cfg: TrainConfig):
    env = make_env(cfg.env)
    history = baselines.mvpi_tabular(env, cfg.lam, cfg.q_lr, cfg.mvpi_iterations, cfg.mvpi_inner_episodes,
                                     cfg.mvpi_eval_episodes, cfg.seed, cfg.gamma)
    metrics = RunMetrics()
    for k, it in enumerate(history):
        metrics.add(evaluate(it.policy, env, cfg.eval_episodes, cfg.seed, k, it.episodes))
    return history[-1].policy, metrics


def train_baseline(cfg: TrainConfig):
    """Run one of the comparison methods with the shared metric schema."""
    if cfg.method == "reinforce":
        return train_mg_reinforce(cfg)
    if cfg.method == "ppo":
        return train_mg_ppo(cfg)
    if cfg.method == "mvo":
        return _train_mvo(cfg)
    if cfg.method in ("tamar", "mvp"):
        return _train_per_episode(cfg)
    if cfg.method == "mvpi":
        return _train_mvpi(cfg)
    raise ConfigError(f"train_baseline: {cfg.method!r} is not a baseline")


def train(cfg: TrainConfig):
    """Dispatch on ``cfg.method``; returns ``(final policy, RunMetrics)``."""
    if cfg.method == "mg_reinforce":
        return train_mg_reinforce(cfg)
    if cfg.method == "mg_ppo":
        return train_mg_ppo(cfg)
    return train_baseline(cfg)
