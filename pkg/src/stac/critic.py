"""Distributional critic: (s, a) -> N(mu, sigma^2), its lagged copy, TD targets and loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, MlpSpec, no_grad, polyak_update
from .autodiff import tensor as T
from .distributions import critic_sigma, gaussian_nll
from .errors import DimensionError, DomainError, TrainingHealthError


@dataclass
class GaussianValue:
    mu: object
    sigma: object


class DistributionalCritic:
    """MLP over the concatenated (state, action) with a 2-wide head (mean, pre-sigma)."""

    def __init__(self, state_dim, action_dim, hidden_dims=(256, 256), dropout_rate=0.0,
                 use_layer_norm=True, rng=None, net=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = net if net is not None else MLP(
            MlpSpec(state_dim + action_dim, 2, hidden_dims, dropout_rate, use_layer_norm), rng)

    @property
    def params(self):
        return self.net.params

    def __call__(self, s, a, train=False, rng=None, track_params=True) -> GaussianValue:
        """Forward pass returning tensors (differentiable w.r.t. params and ``a``)."""
        s = T.as_tensor(s)
        a = T.as_tensor(a)
        if s.shape[-1] != self.state_dim or a.shape[-1] != self.action_dim:
            raise DimensionError(
                f"critic expects state width {self.state_dim} and action width {self.action_dim}, "
                f"got {s.shape} and {a.shape}")
        out = self.net(T.concat([s, a], axis=-1), train=train, rng=rng, track_params=track_params)
        return GaussianValue(out[..., 0], critic_sigma(out[..., 1]))

    def clone(self) -> "DistributionalCritic":
        return DistributionalCritic(self.state_dim, self.action_dim, net=self.net.clone())


def critic_eval(critic: DistributionalCritic, s, a, mode="eval", rng=None) -> GaussianValue:
    """Numeric (mu, sigma) without recording a graph."""
    with no_grad():
        v = critic(s, a, train=(mode == "train"), rng=rng)
    return GaussianValue(v.mu.data, v.sigma.data)


class CriticPair:
    """Online critic plus its lagged copy; the lag only moves through :meth:`polyak`."""

    def __init__(self, online: DistributionalCritic):
        self.online = online
        self.lagged = online.clone()

    def polyak(self, rho):
        polyak_update(self.lagged.params, self.online.params, rho)


def pessimistic_td_target(r, done, next_mu, next_sigma, next_log_prob, alpha, beta, gamma):
    """r + gamma * (mu' - beta*sigma' - alpha*log pi(a'|s')) * (1 - done)."""
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    return soft_td_target(r, done, next_mu - beta * next_sigma, next_log_prob, alpha, gamma)


def soft_td_target(r, done, next_value, next_log_prob, alpha, gamma):
    """Shared single-value soft backup; baselines pass their own continuation value."""
    cont = np.where(done, 0.0, 1.0)
    return r + gamma * (next_value - alpha * next_log_prob) * cont


def td_target(batch, actor, critic_lagged: DistributionalCritic, alpha, beta, gamma, rng,
              lagged_dropout=True):
    """Sample a' ~ pi(.|s') once per transition and build the pessimistic targets.

    The actor samples in train mode; ``lagged_dropout`` controls whether the
    lagged critic's dropout is active. Nothing here records a graph, so no
    gradient can reach the lagged critic or the actor through the target.
    """
    with no_grad():
        sample = actor.sample(batch.s_next, rng, train=True)
        v = critic_lagged(batch.s_next, sample.action, train=lagged_dropout, rng=rng)
    return pessimistic_td_target(batch.r, batch.done, v.mu.data, v.sigma.data,
                                 sample.log_prob.data, alpha, beta, gamma)


def check_targets(targets):
    bad = np.flatnonzero(~np.isfinite(targets))
    if bad.size:
        raise TrainingHealthError(f"non-finite TD target at transition index {int(bad[0])}",
                                  {"bad_indices": bad.tolist()})


def critic_loss(batch, targets, critic: DistributionalCritic, train=True, rng=None):
    """Mean Gaussian NLL of the (detached) targets under the online critic.

    Returns ``(loss tensor, GaussianValue of the batch)``.
    """
    targets = np.asarray(targets, dtype=float)
    check_targets(targets)
    v = critic(batch.s, batch.a, train=train, rng=rng)
    return gaussian_nll(v.mu, v.sigma, targets).mean(), v
