"""Softmax policies over finite state spaces and linear state-value baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def one_hot_features(n_states: int, n_actions: int) -> np.ndarray:
    """State-action one-hot features, shape ``(n_states, n_actions, n_states * n_actions)``."""
    return np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise ValueError("action_probs: non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SoftmaxPolicy:
    """
    ``pi(a|s) = exp(phi(s,a).theta) / sum_b exp(phi(s,b).theta)``.

    ``features`` is the dense feature map of shape ``(n_states, n_actions, dim)``.
    Instances are treated as immutable; updates return new policies.
    """

    theta: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 3 or feats.shape[2] != theta.size:
            raise ValueError("SoftmaxPolicy: features must be (states, actions, dim) matching theta")
        if not np.all(np.isfinite(theta)):
            raise ValueError("SoftmaxPolicy: theta must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "features", feats)

    @classmethod
    def tabular(cls, n_states: int, n_actions: int, theta=None) -> "SoftmaxPolicy":
        feats = one_hot_features(n_states, n_actions)
        if theta is None:
            theta = np.zeros(n_states * n_actions)
        return cls(theta, feats)

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.features)

    def logits_table(self) -> np.ndarray:
        return self.features @ self.theta

    def probs_table(self) -> np.ndarray:
        """Action probabilities for every state, shape ``(n_states, n_actions)``."""
        return _softmax_rows(self.logits_table())

    def log_probs_table(self) -> np.ndarray:
        logits = self.logits_table()
        if not np.all(np.isfinite(logits)):
            raise ValueError("action_probs: non-finite logits")
        z = logits - logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def action_probs(self, state: int) -> np.ndarray:
        return _softmax_rows(self.features[state] @ self.theta)

    def grad_log_prob(self, state: int, action: int) -> np.ndarray:
        """``phi(s,a) - E_{b ~ pi(.|s)} phi(s,b)``."""
        phi = self.features[state]
        return phi[action] - self.action_probs(state) @ phi

    def score_sum(self, states, actions, weights=None, probs=None) -> np.ndarray:
        """
        ``sum_t w_t grad log pi(a_t|s_t)`` for flat step arrays.

        Accumulates weights per state-action cell first, so the cost is one
        contraction over the feature tensor regardless of the number of steps.
        """
        states = np.asarray(states, dtype=np.intp)
        actions = np.asarray(actions, dtype=np.intp)
        w = np.ones(states.size) if weights is None else np.asarray(weights, dtype=float)
        if probs is None:
            probs = self.probs_table()
        n_s, n_a = probs.shape
        cell = np.bincount(states * n_a + actions, weights=w, minlength=n_s * n_a).reshape(n_s, n_a)
        per_state = cell.sum(axis=1)
        coef = cell - per_state[:, None] * probs
        return np.einsum("sa,sad->d", coef, self.features)

    def entropy_grad(self, states, weights=None, probs=None) -> np.ndarray:
        """Gradient of ``sum_t w_t H(pi(.|s_t))`` with respect to theta."""
        states = np.asarray(states, dtype=np.intp)
        w = np.ones(states.size) if weights is None else np.asarray(weights, dtype=float)
        if probs is None:
            probs = self.probs_table()
        n_s = probs.shape[0]
        visits = np.bincount(states, weights=w, minlength=n_s)
        logp = np.log(np.clip(probs, 1e-300, None))
        ent = -(probs * logp).sum(axis=1)
        coef = -probs * (logp + ent[:, None]) * visits[:, None]
        return np.einsum("sa,sad->d", coef, self.features)

    def to_json(self) -> dict:
        return {"kind": "softmax", "feature_dim": int(self.dim), "theta": self.theta.tolist(),
                "n_states": int(self.n_states), "n_actions": int(self.n_actions)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, payload: dict, features: np.ndarray | None = None) -> "SoftmaxPolicy":
        theta = np.asarray(payload["theta"], dtype=float)
        if theta.size != payload["feature_dim"]:
            raise ValueError("policy checkpoint: theta length does not match feature_dim")
        if features is None:
            features = one_hot_features(payload["n_states"], payload["n_actions"])
        return cls(theta, features)

    @classmethod
    def load(cls, path, features: np.ndarray | None = None) -> "SoftmaxPolicy":
        return cls.from_json(json.loads(Path(path).read_text()), features)


@dataclass(frozen=True)
class TablePolicy:
    """Fixed action-probability table, e.g. the greedy policy read off a Q-table."""

    probs: np.ndarray

    @classmethod
    def greedy(cls, q_table: np.ndarray) -> "TablePolicy":
        probs = np.zeros_like(q_table, dtype=float)
        probs[np.arange(q_table.shape[0]), np.argmax(q_table, axis=1)] = 1.0
        return cls(probs)

    def probs_table(self) -> np.ndarray:
        return self.probs

    def action_probs(self, state: int) -> np.ndarray:
        return self.probs[state]

    def to_json(self) -> dict:
        return {"kind": "table", "probs": self.probs.tolist()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def load_policy(path):
    """Read a policy written by ``save``: a softmax parameter vector or a probability table."""
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") == "table":
        return TablePolicy(np.asarray(payload["probs"], dtype=float))
    return SoftmaxPolicy.from_json(payload)


@dataclass(frozen=True)
class LinearValue:
    """``V(s) = omega . phi(s)`` with ``state_features`` of shape ``(n_states, dim)``."""

    omega: np.ndarray
    state_features: np.ndarray

    @classmethod
    def tabular(cls, n_states: int) -> "LinearValue":
        return cls(np.zeros(n_states), np.eye(n_states))

    def predict(self, state) -> float | np.ndarray:
        return self.state_features[state] @ self.omega

    def table(self) -> np.ndarray:
        return self.state_features @ self.omega

    def update(self, state: int, target: float, lr: float) -> "LinearValue":
        """One SGD step on ``(V(s) - target)^2`` (gradient carries the factor 2)."""
        if lr <= 0:
            raise ValueError("value_update: lr must be positive")
        phi = self.state_features[state]
        err = float(phi @ self.omega) - target
        return LinearValue(self.omega - lr * 2.0 * err * phi, self.state_features)

    def fit_trajectory(self, states, targets, lr: float) -> "LinearValue":
        """One SGD step on ``(1/T) sum_t (V(s_t) - g_t)^2``."""
        if lr <= 0:
            raise ValueError("value_update: lr must be positive")
        states = np.asarray(states, dtype=np.intp)
        phi = self.state_features[states]
        err = phi @ self.omega - np.asarray(targets, dtype=float)
        grad = 2.0 * (err @ phi) / states.size
        return LinearValue(self.omega - lr * grad, self.state_features)


def value_predict(v: LinearValue, state) -> float:
    return float(v.predict(state))


def value_update(v: LinearValue, state, target: float, lr: float) -> LinearValue:
    return v.update(state, target, lr)
