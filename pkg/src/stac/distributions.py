"""Gaussian likelihoods, the tanh-squashed policy distribution and sub-Gaussian samplers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .errors import DomainError, RangeError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)

CRITIC_SIGMA_FLOOR = 1e-4
CRITIC_SIGMA_CAP = 1e3
ACTOR_LOG_STD_MIN = -20.0
ACTOR_LOG_STD_MAX = 2.0


def gaussian_nll(mu, sigma, target):
    """Negative log density of N(mu, sigma^2) at ``target``.

    Accepts floats, arrays or tensors; returns a tensor when ``mu`` or
    ``sigma`` is one so the result can be differentiated.
    """
    sigma_val = sigma.data if isinstance(sigma, Tensor) else np.asarray(sigma, dtype=float)
    if np.any(~(sigma_val > 0)):
        raise DomainError("gaussian_nll requires sigma > 0")
    if isinstance(mu, Tensor) or isinstance(sigma, Tensor):
        z = (T.as_tensor(target) - mu) / sigma
        return HALF_LOG_2PI + T.log(sigma) + 0.5 * z * z
    z = (np.asarray(target, dtype=float) - np.asarray(mu, dtype=float)) / sigma_val
    out = HALF_LOG_2PI + np.log(sigma_val) + 0.5 * z * z
    return float(out) if np.ndim(out) == 0 else out


def critic_sigma(pre):
    """Map the critic's raw second head output to a positive std."""
    return T.clip(T.softplus(pre) + CRITIC_SIGMA_FLOOR, None, CRITIC_SIGMA_CAP)


def actor_std(pre):
    """softplus, then clamp log-std to [-20, 2]."""
    return T.clip(T.softplus(pre), math.exp(ACTOR_LOG_STD_MIN), math.exp(ACTOR_LOG_STD_MAX))


def log_one_minus_tanh_sq(u):
    """log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|."""
    if isinstance(u, Tensor):
        return 2.0 * (LOG2 - u - T.softplus(-2.0 * u))
    u = np.asarray(u, dtype=float)
    return 2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class DiagonalGaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if np.any(~(self.std > 0)):
            raise DomainError("DiagonalGaussian std must be strictly positive")

    def log_prob(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.sum(-0.5 * z * z - np.log(self.std) - HALF_LOG_2PI, axis=-1)

    def sample(self, rng):
        return self.mean + self.std * rng.standard_normal(self.mean.shape)


@dataclass
class SquashedGaussianPolicySample:
    action: Tensor      # tanh(pre_tanh), in (-1, 1)
    log_prob: Tensor    # log density of ``action``, summed over action dims
    pre_tanh: Tensor
    mean: Tensor
    std: Tensor


def split_policy_output(policy_out):
    """Split a (..., 2*d_a) head into means and positive stds."""
    policy_out = T.as_tensor(policy_out)
    d_a = policy_out.shape[-1] // 2
    if policy_out.shape[-1] != 2 * d_a or d_a == 0:
        raise DomainError(f"policy head width must be even and positive, got {policy_out.shape[-1]}")
    return policy_out[..., :d_a], actor_std(policy_out[..., d_a:])


def squashed_sample(policy_out, rng=None, noise=None) -> SquashedGaussianPolicySample:
    """Reparameterised sample a = tanh(mean + std * xi) with its exact log-density."""
    mean, std = split_policy_output(policy_out)
    if noise is None:
        noise = rng.standard_normal(mean.shape)
    noise = np.asarray(noise, dtype=float)
    u = mean + std * noise
    base = -0.5 * noise * noise - HALF_LOG_2PI - T.log(std)
    log_prob = (base - log_one_minus_tanh_sq(u)).sum(axis=-1)
    return SquashedGaussianPolicySample(T.tanh(u), log_prob, u, mean, std)


def squashed_log_prob(pre_tanh, mean, std):
    """Log-density of tanh(u) for pre-squash values ``u`` (plain arrays)."""
    u = np.asarray(pre_tanh, dtype=float)
    z = (u - mean) / std
    base = -0.5 * z * z - HALF_LOG_2PI - np.log(std)
    return np.sum(base - log_one_minus_tanh_sq(u), axis=-1)


# sub-Gaussian noise -----------------------------------------------------------

FAMILIES = ("gaussian", "uniform", "bounded-mixture")


def sample_subgaussian(family, mean, sigma, rng, size):
    """Draw ``size`` samples with the given mean and variance proxy sigma^2.

    gaussian         N(mean, sigma^2)
    uniform          U[mean - sqrt(3) sigma, mean + sqrt(3) sigma]; its MGF is
                     sinh(x)/x <= exp(x^2 / 6), so sigma^2 is a valid proxy
    bounded-mixture  50/50 mix of +-sigma (Rademacher) and the uniform above;
                     a mixture of proxy-sigma^2 laws keeps proxy sigma^2
    """
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if family == "gaussian":
        return mean + sigma * rng.standard_normal(size)
    if family == "uniform":
        return mean + math.sqrt(3.0) * sigma * rng.uniform(-1.0, 1.0, size)
    if family == "bounded-mixture":
        rademacher = rng.integers(0, 2, size) * 2.0 - 1.0
        unif = math.sqrt(3.0) * rng.uniform(-1.0, 1.0, size)
        pick = rng.random(size) < 0.5
        return mean + sigma * np.where(pick, rademacher, unif)
    raise ValueError(f"unknown sub-Gaussian family {family!r}; expected one of {FAMILIES}")


def exact_mgf(family, mean, sigma, lam):
    """Closed-form E[exp(lam X)] for the families of :func:`sample_subgaussian`."""
    def sinhc(x):
        return 1.0 if x == 0 else math.sinh(x) / x

    shift = math.exp(lam * mean)
    if family == "gaussian":
        return shift * math.exp(0.5 * lam * lam * sigma * sigma)
    if family == "uniform":
        return shift * sinhc(math.sqrt(3.0) * lam * sigma)
    if family == "bounded-mixture":
        return shift * (0.5 * math.cosh(lam * sigma) + 0.5 * sinhc(math.sqrt(3.0) * lam * sigma))
    raise ValueError(f"unknown sub-Gaussian family {family!r}")


@dataclass(frozen=True)
class SubGaussianSampler:
    family: str
    mean: float = 0.0
    variance_proxy: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown sub-Gaussian family {self.family!r}; expected one of {FAMILIES}")
        if self.variance_proxy < 0:
            raise DomainError("variance_proxy must be >= 0")

    def sample(self, rng, size):
        return sample_subgaussian(self.family, self.mean, math.sqrt(self.variance_proxy), rng, size)


@dataclass
class MgfCheck:
    passed: bool
    slack: float        # bound - empirical; negative means the bound was exceeded
    empirical: float
    bound: float
    stderr: float


def subgaussian_mgf_check(sampler: SubGaussianSampler, lam: float, n: int, rng,
                          variance_proxy: float | None = None, n_sigma: float = 3.0) -> MgfCheck:
    """Monte Carlo check of E[exp(lam X)] <= exp(lam mu + lam^2 s^2 / 2).

    ``variance_proxy`` lets a sampler be tested against a proxy other than
    the one it was built with.
    """
    proxy = sampler.variance_proxy if variance_proxy is None else variance_proxy
    x = sampler.sample(rng, n)
    exponent = lam * x
    log_bound = lam * sampler.mean + 0.5 * lam * lam * proxy
    if exponent.size and (exponent.max() > 700.0 or log_bound > 700.0):
        raise RangeError(f"exp(lambda * X) overflows at lambda={lam}; shrink |lambda|")
    vals = np.exp(exponent)
    empirical = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    bound = math.exp(log_bound)
    return MgfCheck(empirical <= bound + n_sigma * stderr, bound - empirical, empirical, bound, stderr)
