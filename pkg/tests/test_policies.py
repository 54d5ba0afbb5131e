from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meangini.oracle import finite_difference
from meangini.policies import (LinearValue, SoftmaxPolicy, TablePolicy, load_policy, one_hot_features,
                               value_predict, value_update)

thetas = arrays(float, 12, elements=st.floats(-5, 5, allow_subnormal=False))


def test_zero_theta_is_uniform():
    pol = SoftmaxPolicy.tabular(3, 4)
    np.testing.assert_allclose(pol.probs_table(), 0.25)


def test_ln3_logit_gives_three_to_one():
    pol = SoftmaxPolicy.tabular(1, 2, theta=np.array([np.log(3.0), 0.0]))
    np.testing.assert_allclose(pol.action_probs(0), [0.75, 0.25], atol=1e-15)


def test_non_finite_theta_rejected():
    with pytest.raises(ValueError):
        SoftmaxPolicy.tabular(1, 2, theta=np.array([np.inf, 0.0]))


def test_large_logits_do_not_overflow():
    pol = SoftmaxPolicy.tabular(1, 3, theta=np.array([800.0, 799.0, -800.0]))
    p = pol.action_probs(0)
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0, abs=1e-12)


@given(thetas, st.floats(-50, 50))
def test_softmax_shift_invariance(theta, c):
    pol = SoftmaxPolicy.tabular(3, 4, theta=theta)
    shifted = theta.reshape(3, 4).copy()
    shifted[1] += c
    np.testing.assert_allclose(pol.with_theta(shifted.ravel()).probs_table(), pol.probs_table(), atol=1e-12)


@given(thetas)
def test_probs_normalized_and_positive(theta):
    p = SoftmaxPolicy.tabular(3, 4, theta=theta).probs_table()
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@given(thetas, st.floats(0.01, 20))
def test_argmax_preserved_under_positive_scaling(theta, c):
    a = SoftmaxPolicy.tabular(3, 4, theta=theta).logits_table()
    b = SoftmaxPolicy.tabular(3, 4, theta=c * theta).logits_table()
    np.testing.assert_array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))


def test_uniform_score_one_hot():
    g = SoftmaxPolicy.tabular(1, 4).grad_log_prob(0, 2)
    np.testing.assert_allclose(g, [-0.25, -0.25, 0.75, -0.25])


@given(thetas)
def test_score_zero_mean(theta):
    pol = SoftmaxPolicy.tabular(3, 4, theta=theta)
    for s in range(3):
        p = pol.action_probs(s)
        total = sum(p[a] * pol.grad_log_prob(s, a) for a in range(4))
        np.testing.assert_allclose(total, 0.0, atol=1e-10)


def test_score_matches_finite_difference(rng):
    feats = rng.normal(size=(3, 4, 5))
    pol = SoftmaxPolicy(rng.normal(size=5), feats)
    for s, a in [(0, 1), (2, 3)]:
        fd = finite_difference(lambda t: float(np.log(pol.with_theta(t).action_probs(s)[a])), pol.theta)
        np.testing.assert_allclose(pol.grad_log_prob(s, a), fd, atol=1e-7)


def test_score_sum_matches_per_step_loop(rng):
    pol = SoftmaxPolicy(rng.normal(size=6), rng.normal(size=(4, 3, 6)))
    states = rng.integers(0, 4, size=25)
    actions = rng.integers(0, 3, size=25)
    w = rng.normal(size=25)
    loop = sum(wt * pol.grad_log_prob(s, a) for s, a, wt in zip(states, actions, w))
    np.testing.assert_allclose(pol.score_sum(states, actions, w), loop, atol=1e-10)


def test_entropy_grad_matches_finite_difference(rng):
    pol = SoftmaxPolicy.tabular(2, 3, theta=rng.normal(size=6))
    states = np.array([0, 1, 1])

    def ent(t):
        p = pol.with_theta(t).probs_table()[states]
        return float(-(p * np.log(p)).sum())

    np.testing.assert_allclose(pol.entropy_grad(states), finite_difference(ent, pol.theta), atol=1e-7)


def test_checkpoint_round_trip(tmp_path, rng):
    pol = SoftmaxPolicy.tabular(3, 2, theta=rng.normal(size=6))
    path = tmp_path / "p.json"
    pol.save(path)
    back = load_policy(path)
    np.testing.assert_array_equal(back.theta, pol.theta)
    table = TablePolicy.greedy(rng.normal(size=(3, 2)))
    table.save(path)
    np.testing.assert_array_equal(load_policy(path).probs_table(), table.probs_table())


def test_checkpoint_dimension_mismatch():
    with pytest.raises(ValueError):
        SoftmaxPolicy.from_json({"feature_dim": 3, "theta": [0.0, 1.0], "n_states": 1, "n_actions": 2})


def test_one_hot_shape():
    f = one_hot_features(2, 3)
    assert f.shape == (2, 3, 6) and f[1, 2, 5] == 1.0 and f.sum() == 6


def test_greedy_table():
    q = np.array([[0.0, 2.0, 1.0], [5.0, -1.0, 0.0]])
    np.testing.assert_array_equal(TablePolicy.greedy(q).probs_table(), [[0, 1, 0], [1, 0, 0]])


def test_value_examples():
    v = LinearValue.tabular(1)
    assert value_predict(v, 0) == 0.0
    v = value_update(v, 0, 10.0, 0.1)
    assert v.omega[0] == pytest.approx(2.0)
    for _ in range(200):
        v = value_update(v, 0, 10.0, 0.1)
    assert abs(value_predict(v, 0) - 10.0) < 1e-3
    with pytest.raises(ValueError):
        value_update(v, 0, 1.0, 0.0)


def test_fit_trajectory_averages_over_steps():
    v = LinearValue.tabular(2).fit_trajectory([0, 1], [4.0, 8.0], 0.5)
    # gradient 2 * err * phi / T with T = 2
    np.testing.assert_allclose(v.omega, [2.0, 4.0])
