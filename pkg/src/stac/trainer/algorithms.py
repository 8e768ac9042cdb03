"""STAC and the two baselines (SAC, ESTAC) behind one update interface.

One call to :meth:`Algorithm.update` is a full gradient phase, in this order:
build TD targets, critic step, actor step, temperature step, Polyak averaging.
"""
from __future__ import annotations

import math

import numpy as np

from ..actor import SquashedGaussianPolicy, TemperatureState, actor_loss, policy_value_loss, temperature_loss
from ..autodiff import MLP, AdamState, MlpSpec, adam_step, grad_norm, no_grad, polyak_update
from ..autodiff import tensor as T
from ..critic import DistributionalCritic, check_targets, critic_loss, soft_td_target, td_target
from ..distributions import gaussian_nll
from ..errors import TrainingHealthError, UsageError
from .config import TrainConfig


class ScalarCritic:
    """Plain Q(s, a) network; the value is column 0 of the head."""

    def __init__(self, state_dim, action_dim, hidden_dims=(256, 256), dropout_rate=0.0,
                 use_layer_norm=True, rng=None, net=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = net if net is not None else MLP(
            MlpSpec(state_dim + action_dim, 1, hidden_dims, dropout_rate, use_layer_norm), rng)

    @property
    def params(self):
        return self.net.params

    def __call__(self, s, a, train=False, rng=None, track_params=True):
        x = T.concat([T.as_tensor(s), T.as_tensor(a)], axis=-1)
        return self.net(x, train=train, rng=rng, track_params=track_params)[..., 0]

    def clone(self):
        return ScalarCritic(self.state_dim, self.action_dim, net=self.net.clone())


def sac_td_target(batch, actor, lagged_critics, alpha, gamma, rng, lagged_dropout=True):
    """r + gamma * (min_i Qbar_i(s', a') - alpha log pi(a'|s')) * (1 - done)."""
    with no_grad():
        smp = actor.sample(batch.s_next, rng, train=True)
        qs = [c(batch.s_next, smp.action, train=lagged_dropout, rng=rng).data for c in lagged_critics]
    return soft_td_target(batch.r, batch.done, np.minimum.reduce(qs), smp.log_prob.data, alpha, gamma)


def estac_td_target(batch, actor, lagged_critics, alpha, gamma, rng, lagged_dropout=True):
    """Soft target using the smaller of the lagged distributional means (no sigma term)."""
    with no_grad():
        smp = actor.sample(batch.s_next, rng, train=True)
        mus = [c(batch.s_next, smp.action, train=lagged_dropout, rng=rng).mu.data for c in lagged_critics]
    return soft_td_target(batch.r, batch.done, np.minimum.reduce(mus), smp.log_prob.data, alpha, gamma)


def _min_tensors(values):
    out = values[0]
    for v in values[1:]:
        out = T.minimum(out, v)
    return out


class Algorithm:
    name = "base"

    def __init__(self, config: TrainConfig, state_dim: int, action_dim: int, rng):
        self.config = config
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.policy = SquashedGaussianPolicy(state_dim, action_dim, config.hidden_dims, config.actor_dropout,
                                             config.layer_norm, rng)
        self.temperature = TemperatureState(config.resolved_target_entropy(action_dim), config.init_alpha)
        self.critics = self._build_critics(rng)
        self.lagged = [c.clone() for c in self.critics]
        self.critic_params = [p for c in self.critics for p in c.params]
        self.lagged_params = [p for c in self.lagged for p in c.params]
        self.critic_opt = AdamState.create(self.critic_params, config.critic_lr)
        self.actor_opt = AdamState.create(self.policy.params, config.actor_lr)
        self.alpha_opt = AdamState.create(self.temperature.params, config.alpha_lr)
        self.updates = 0

    def _build_critics(self, rng):
        raise NotImplementedError

    @property
    def alpha(self):
        return self.temperature.alpha

    # pieces of a gradient phase ---------------------------------------------------
    def td_targets(self, batch, rng):
        raise NotImplementedError

    def critic_objective(self, batch, targets, rng):
        """Return ``(loss tensor, mean sigma or nan)``."""
        raise NotImplementedError

    def actor_objective(self, states, rng):
        """Return ``(loss tensor, policy sample)``."""
        raise NotImplementedError

    def value_estimate(self, s, a):
        """Online critic's point estimate of Q(s, a), eval mode."""
        raise NotImplementedError

    def update(self, batch, rng) -> dict:
        cfg = self.config
        alpha = self.alpha
        targets = self.td_targets(batch, rng)
        check_targets(targets)

        loss_q, sigma_mean = self.critic_objective(batch, targets, rng)
        loss_q.backward()
        gn_q = grad_norm(self.critic_params)
        adam_step(self.critic_params, self.critic_opt)

        loss_pi, smp = self.actor_objective(batch.s, rng)
        loss_pi.backward()
        gn_pi = grad_norm(self.policy.params)
        adam_step(self.policy.params, self.actor_opt)

        loss_a = temperature_loss(smp.log_prob, self.temperature)
        loss_a.backward()
        adam_step(self.temperature.params, self.alpha_opt)

        polyak_update(self.lagged_params, self.critic_params, cfg.rho)
        self.updates += 1

        stats = {"critic_loss": loss_q.item(), "actor_loss": loss_pi.item(), "alpha": alpha,
                 "sigma_mean": sigma_mean, "critic_grad_norm": gn_q, "actor_grad_norm": gn_pi,
                 "entropy": float(-smp.log_prob.data.mean())}
        if not all(math.isfinite(v) for k, v in stats.items() if k != "sigma_mean"):
            raise TrainingHealthError("non-finite loss or gradient during update", stats)
        return stats

    def num_critic_params(self):
        return sum(p.data.size for p in self.critic_params)

    def state_dict(self):
        out = {f"actor/{k}": v for k, v in self.policy.net.state_dict().items()}
        for i, c in enumerate(self.critics):
            out.update({f"critic{i}/{k}": v for k, v in c.net.state_dict().items()})
        out["log_alpha"] = self.temperature.log_alpha.data.copy()
        return out


class STAC(Algorithm):
    """Single distributional critic, beta-pessimistic target and actor objective."""

    name = "stac"

    def _build_critics(self, rng):
        cfg = self.config
        return [DistributionalCritic(self.state_dim, self.action_dim, cfg.hidden_dims, cfg.critic_dropout,
                                     cfg.layer_norm, rng)]

    @property
    def critic(self):
        return self.critics[0]

    @property
    def critic_lagged(self):
        return self.lagged[0]

    def td_targets(self, batch, rng):
        cfg = self.config
        return td_target(batch, self.policy, self.critic_lagged, self.alpha, cfg.beta, cfg.gamma, rng,
                         lagged_dropout=cfg.target_dropout)

    def critic_objective(self, batch, targets, rng):
        loss, v = critic_loss(batch, targets, self.critic, train=True, rng=rng)
        return loss, float(v.sigma.data.mean())

    def actor_objective(self, states, rng):
        loss, smp, _ = actor_loss(states, self.policy, self.critic, self.alpha, self.config.beta, rng)
        return loss, smp

    def value_estimate(self, s, a):
        with no_grad():
            return self.critic(s, a).mu.data


class SAC(Algorithm):
    """Two scalar critics, clipped double-Q target, squared-error loss."""

    name = "sac"

    def _build_critics(self, rng):
        cfg = self.config
        return [ScalarCritic(self.state_dim, self.action_dim, cfg.hidden_dims, cfg.critic_dropout,
                             cfg.layer_norm, rng) for _ in range(2)]

    def td_targets(self, batch, rng):
        return sac_td_target(batch, self.policy, self.lagged, self.alpha, self.config.gamma, rng,
                             lagged_dropout=self.config.target_dropout)

    def critic_objective(self, batch, targets, rng):
        loss = None
        for c in self.critics:
            err = c(batch.s, batch.a, train=True, rng=rng) - targets
            term = (err * err).mean()
            loss = term if loss is None else loss + term
        return loss, float("nan")

    def actor_objective(self, states, rng):
        def value(s, a):
            return _min_tensors([c(s, a, train=True, rng=rng, track_params=False) for c in self.critics])

        return policy_value_loss(states, self.policy, value, self.alpha, rng)

    def value_estimate(self, s, a):
        with no_grad():
            return np.minimum.reduce([c(s, a).data for c in self.critics])


class ESTAC(Algorithm):
    """Two distributional critics; min of the means replaces the sigma penalty."""

    name = "estac"

    def _build_critics(self, rng):
        cfg = self.config
        return [DistributionalCritic(self.state_dim, self.action_dim, cfg.hidden_dims, cfg.critic_dropout,
                                     cfg.layer_norm, rng) for _ in range(2)]

    def td_targets(self, batch, rng):
        return estac_td_target(batch, self.policy, self.lagged, self.alpha, self.config.gamma, rng,
                               lagged_dropout=self.config.target_dropout)

    def critic_objective(self, batch, targets, rng):
        loss, sig = None, []
        for c in self.critics:
            v = c(batch.s, batch.a, train=True, rng=rng)
            term = gaussian_nll(v.mu, v.sigma, targets).mean()
            loss = term if loss is None else loss + term
            sig.append(v.sigma.data.mean())
        return loss, float(np.mean(sig))

    def actor_objective(self, states, rng):
        def value(s, a):
            return _min_tensors([c(s, a, train=True, rng=rng, track_params=False).mu for c in self.critics])

        return policy_value_loss(states, self.policy, value, self.alpha, rng)

    def value_estimate(self, s, a):
        with no_grad():
            return np.minimum.reduce([c(s, a).mu.data for c in self.critics])


ALGORITHM_CLASSES = {"stac": STAC, "sac": SAC, "estac": ESTAC}


def build_algorithm(config: TrainConfig, state_dim: int, action_dim: int, rng) -> Algorithm:
    try:
        cls = ALGORITHM_CLASSES[config.algorithm]
    except KeyError:
        raise UsageError(f"unknown algorithm {config.algorithm!r}; expected one of {sorted(ALGORITHM_CLASSES)}") \
            from None
    return cls(config, state_dim, action_dim, rng)
