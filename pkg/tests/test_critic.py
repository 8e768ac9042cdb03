import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stac.actor import SquashedGaussianPolicy
from stac.autodiff import AdamState, adam_step, dropout_mask, polyak_update
from stac.critic import (CriticPair, DistributionalCritic, critic_eval, critic_loss, pessimistic_td_target,
                         soft_td_target, td_target)
from stac.errors import DimensionError, DomainError, TrainingHealthError
from stac.replay import Batch
from stac.trainer.algorithms import ScalarCritic, sac_td_target

SOFTPLUS_INV_1 = math.log(math.expm1(1.0 - 1e-4))   # head pre-std giving sigma == 1


def make_batch(rng, n=8, ds=3, da=2, done=None):
    return Batch(rng.normal(size=(n, ds)), rng.uniform(-1, 1, (n, da)), rng.normal(size=n),
                 rng.normal(size=(n, ds)), np.zeros(n, bool) if done is None else done)


def zero_weights(critic, head_bias):
    for p in critic.params:
        if p.name.endswith("weight"):
            p.data[...] = 0.0
    critic.net.head[1].data[:] = head_bias


def test_zero_weight_critic_outputs_head_bias():
    c = DistributionalCritic(3, 2, hidden_dims=(8, 8), rng=np.random.default_rng(0))
    zero_weights(c, [0.7, -0.3])
    v = critic_eval(c, np.ones((4, 3)), np.zeros((4, 2)))
    np.testing.assert_array_equal(v.mu, 0.7)
    np.testing.assert_allclose(v.sigma, np.logaddexp(0, -0.3) + 1e-4, rtol=1e-15)


def test_eval_mode_is_deterministic():
    c = DistributionalCritic(3, 2, hidden_dims=(8, 8), dropout_rate=0.5, rng=np.random.default_rng(1))
    s, a = np.random.default_rng(2).normal(size=(5, 3)), np.zeros((5, 2))
    v1, v2 = critic_eval(c, s, a), critic_eval(c, s, a)
    np.testing.assert_array_equal(v1.mu, v2.mu)
    np.testing.assert_array_equal(v1.sigma, v2.sigma)


def test_train_mode_matches_hand_rolled_masked_forward():
    c = DistributionalCritic(2, 1, hidden_dims=(6, 5), dropout_rate=0.5, rng=np.random.default_rng(3))
    s, a = np.random.default_rng(4).normal(size=(4, 2)), np.random.default_rng(5).uniform(-1, 1, (4, 1))
    got = critic_eval(c, s, a, mode="train", rng=np.random.default_rng(6))

    mask_rng = np.random.default_rng(6)
    h = np.concatenate([s, a], axis=1)
    for block in c.net.layers:
        w, b = (p.data for p in block["linear"])
        h = (h @ w + b) * dropout_mask((4, w.shape[1]), 0.5, mask_rng)
        g, beta = (p.data for p in block["norm"])
        h = (h - h.mean(1, keepdims=True)) / np.sqrt(h.var(1, keepdims=True) + 1e-5) * g + beta
        h = np.maximum(h, 0.0)
    out = h @ c.net.head[0].data + c.net.head[1].data
    np.testing.assert_allclose(got.mu, out[:, 0], rtol=1e-12)
    np.testing.assert_allclose(got.sigma, np.logaddexp(0, out[:, 1]) + 1e-4, rtol=1e-12)


def test_dimension_mismatch_raises():
    c = DistributionalCritic(3, 2, hidden_dims=(4,), rng=np.random.default_rng(0))
    with pytest.raises(DimensionError):
        critic_eval(c, np.zeros((1, 4)), np.zeros((1, 2)))


# TD target --------------------------------------------------------------------------

def test_terminal_transition_target_is_reward():
    assert pessimistic_td_target(np.array([1.0]), np.array([True]), np.array([50.0]), np.array([3.0]),
                                 np.array([-2.0]), 0.2, 0.5, 0.99)[0] == 1.0


def test_beta_alpha_zero_reduces_to_mean_backup():
    t = pessimistic_td_target(np.array([0.3]), np.array([False]), np.array([2.0]), np.array([1.0]),
                              np.array([-1.0]), 0.0, 0.0, 0.9)
    assert t[0] == 0.3 + 0.9 * 2.0


def test_target_arithmetic():
    t = pessimistic_td_target(np.array([0.0]), np.array([False]), np.array([2.0]), np.array([1.0]),
                              np.array([0.0]), 0.0, 0.5, 0.99)
    assert t[0] == pytest.approx(1.485, abs=1e-15)


def test_negative_beta_rejected():
    with pytest.raises(DomainError):
        pessimistic_td_target(0.0, False, 0.0, 1.0, 0.0, 0.1, -0.1, 0.99)


finite = st.floats(-50, 50)


@settings(max_examples=300, deadline=None)
@given(r=finite, mu=finite, sigma=st.floats(1e-4, 1e3), lp=finite, alpha=st.floats(0, 2),
       b1=st.floats(0, 5), b2=st.floats(0, 5), gamma=st.floats(0, 0.999))
def test_target_non_increasing_in_beta(r, mu, sigma, lp, alpha, b1, b2, gamma):
    lo, hi = sorted((b1, b2))
    args = (np.array([r]), np.array([False]), np.array([mu]), np.array([sigma]), np.array([lp]), alpha)
    assert pessimistic_td_target(*args, hi, gamma)[0] <= pessimistic_td_target(*args, lo, gamma)[0]


@settings(max_examples=300, deadline=None)
@given(r=finite, mu=finite, sigma=st.floats(1e-4, 1e3), lp=finite, alpha=st.floats(0, 2),
       beta=st.floats(0, 5), gamma=st.floats(0, 0.999))
def test_pessimism_gap_is_gamma_beta_sigma(r, mu, sigma, lp, alpha, beta, gamma):
    args = (np.array([r]), np.array([False]))
    stac = pessimistic_td_target(*args, np.array([mu]), np.array([sigma]), np.array([lp]), alpha, beta, gamma)
    soft = soft_td_target(*args, np.array([mu]), np.array([lp]), alpha, gamma)
    assert soft[0] - stac[0] == pytest.approx(gamma * beta * sigma, rel=1e-9, abs=1e-9)


def test_beta_zero_target_bit_equal_to_single_critic_soft_target():
    rng = np.random.default_rng(10)
    batch = make_batch(rng, n=64)
    actor = SquashedGaussianPolicy(3, 2, (16, 16), dropout_rate=0.1, rng=rng)
    critic = DistributionalCritic(3, 2, (16, 16), dropout_rate=0.1, rng=rng)
    stac = td_target(batch, actor, critic, 0.2, 0.0, 0.99, np.random.default_rng(11))
    sac = sac_td_target(batch, actor, [ScalarCritic(3, 2, net=critic.net)], 0.2, 0.99, np.random.default_rng(11))
    assert stac.tobytes() == sac.tobytes()


def test_identical_twin_critics_make_min_a_no_op():
    rng = np.random.default_rng(12)
    batch = make_batch(rng)
    actor = SquashedGaussianPolicy(3, 2, (8,), rng=rng)
    q = ScalarCritic(3, 2, (8,), rng=rng)
    twin = [q, q.clone()]
    single = sac_td_target(batch, actor, [q], 0.1, 0.99, np.random.default_rng(13), lagged_dropout=False)
    double = sac_td_target(batch, actor, twin, 0.1, 0.99, np.random.default_rng(13), lagged_dropout=False)
    assert single.tobytes() == double.tobytes()


def test_no_gradient_reaches_lagged_critic_or_actor():
    rng = np.random.default_rng(14)
    batch = make_batch(rng)
    actor = SquashedGaussianPolicy(3, 2, (8,), dropout_rate=0.1, rng=rng)
    pair = CriticPair(DistributionalCritic(3, 2, (8,), dropout_rate=0.1, rng=rng))
    targets = td_target(batch, actor, pair.lagged, 0.2, 0.5, 0.99, rng)
    loss, _ = critic_loss(batch, targets, pair.online, rng=rng)
    loss.backward()
    assert not any(np.any(p.grad) for p in pair.lagged.params + actor.params)
    assert all(np.any(p.grad) for p in pair.online.params)


def test_critic_pair_lag_moves_only_through_polyak():
    pair = CriticPair(DistributionalCritic(3, 2, (8,), rng=np.random.default_rng(15)))
    for p in pair.online.params:
        p.assign(p.data + 1.0)
    before = [p.data.copy() for p in pair.lagged.params]
    assert all(np.array_equal(b, p.data) for b, p in zip(before, pair.lagged.params))
    pair.polyak(0.9)
    for b, lag, on in zip(before, pair.lagged.params, pair.online.params):
        np.testing.assert_array_equal(lag.data, 0.9 * b + (1 - 0.9) * on.data)


# loss -------------------------------------------------------------------------------

def test_single_transition_loss_at_perfect_mean():
    c = DistributionalCritic(3, 2, hidden_dims=(4,), rng=np.random.default_rng(16))
    zero_weights(c, [1.25, SOFTPLUS_INV_1])
    batch = make_batch(np.random.default_rng(17), n=1)
    loss, v = critic_loss(batch, np.array([1.25]), c, train=False)
    assert v.sigma.data[0] == pytest.approx(1.0, abs=1e-14)
    assert loss.item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-13)


def test_one_adam_step_reduces_loss_on_frozen_batch():
    rng = np.random.default_rng(18)
    c = DistributionalCritic(3, 2, hidden_dims=(16, 16), rng=rng)
    batch, targets = make_batch(rng, n=1), np.array([3.0])
    opt = AdamState.create(c.params, 1e-3)
    loss0, _ = critic_loss(batch, targets, c, train=False)
    loss0.backward()
    adam_step(c.params, opt)
    loss1, _ = critic_loss(batch, targets, c, train=False)
    assert loss1.item() < loss0.item()


def test_non_finite_target_names_transition():
    c = DistributionalCritic(3, 2, hidden_dims=(4,), rng=np.random.default_rng(19))
    targets = np.zeros(8)
    targets[5] = np.nan
    with pytest.raises(TrainingHealthError, match="index 5"):
        critic_loss(make_batch(np.random.default_rng(20)), targets, c)


def test_polyak_matches_closed_form():
    a = DistributionalCritic(3, 2, (4,), rng=np.random.default_rng(21))
    b = DistributionalCritic(3, 2, (4,), rng=np.random.default_rng(22))
    old = [p.data.copy() for p in a.params]
    polyak_update(a.params, b.params, 0.995)
    for o, p, q in zip(old, a.params, b.params):
        np.testing.assert_array_equal(p.data, 0.995 * o + (1 - 0.995) * q.data)
