"""Tanh-squashed Gaussian policy, pessimistic actor objective and temperature tuning."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import MLP, MlpSpec, Parameter, no_grad
from .autodiff import tensor as T
from .distributions import split_policy_output, squashed_log_prob, squashed_sample
from .errors import DimensionError


class SquashedGaussianPolicy:
    def __init__(self, state_dim, action_dim, hidden_dims=(256, 256), dropout_rate=0.0,
                 use_layer_norm=True, rng=None, net=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = net if net is not None else MLP(
            MlpSpec(state_dim, 2 * action_dim, hidden_dims, dropout_rate, use_layer_norm), rng)

    @property
    def params(self):
        return self.net.params

    def _head(self, s, train, rng):
        s = T.as_tensor(s)
        if s.shape[-1] != self.state_dim:
            raise DimensionError(f"policy expects state width {self.state_dim}, got {s.shape}")
        return self.net(s, train=train, rng=rng)

    def sample(self, s, rng, train=True):
        """Reparameterised sample; dropout masks are drawn before the action noise."""
        return squashed_sample(self._head(s, train, rng), rng)

    def act(self, s, mode="train", rng=None):
        """Numeric action and log-prob. ``eval`` returns tanh(mean) with dropout off."""
        with no_grad():
            if mode == "train":
                smp = self.sample(s, rng, train=True)
                return smp.action.data, smp.log_prob.data
            mean, std = split_policy_output(self._head(s, False, None))
            return np.tanh(mean.data), squashed_log_prob(mean.data, mean.data, std.data)


def actor_loss(states, policy, critic, alpha, beta, rng, train=True):
    """-(1/N) sum[mu(s,a) - beta*sigma(s,a) - alpha*log pi(a|s)], a ~ pi(.|s) reparameterised.

    The critic's weights enter as constants; the gradient reaches the policy
    through the sampled action. Returns ``(loss, sample, critic value)``.
    """
    smp = policy.sample(states, rng, train=train)
    v = critic(states, smp.action, train=train, rng=rng, track_params=False)
    objective = v.mu - beta * v.sigma - alpha * smp.log_prob
    return -objective.mean(), smp, v


def policy_value_loss(states, policy, value_fn, alpha, rng, train=True):
    """Same objective for an arbitrary differentiable value_fn(states, actions) -> tensor."""
    smp = policy.sample(states, rng, train=train)
    q = value_fn(states, smp.action)
    return -(q - alpha * smp.log_prob).mean(), smp


class TemperatureState:
    """Entropy temperature, stored as log(alpha) so alpha stays positive."""

    def __init__(self, target_entropy: float, init_alpha: float = 1.0):
        self.target_entropy = float(target_entropy)
        self.log_alpha = Parameter(np.array(math.log(init_alpha)), name="log_alpha")

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    @property
    def params(self):
        return [self.log_alpha]


def temperature_objective(alpha, log_probs, target_entropy):
    """alpha * (-H_target + mean(-log pi)) for any alpha tensor; log_probs are constants."""
    lp = log_probs.data if isinstance(log_probs, T.Tensor) else np.asarray(log_probs, dtype=float)
    return alpha * (-float(target_entropy) + float(np.mean(-lp)))


def temperature_loss(log_probs, temp: TemperatureState):
    """Temperature loss as a function of the trainable log(alpha)."""
    return temperature_objective(T.exp(temp.log_alpha), log_probs, temp.target_entropy)


def temperature_grad_alpha(log_probs, target_entropy) -> float:
    """Closed-form dL/d(alpha) = -H_target + mean(-log pi)."""
    return -float(target_entropy) + float(np.mean(-np.asarray(log_probs, dtype=float)))
