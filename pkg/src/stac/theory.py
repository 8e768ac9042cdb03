"""Tabular laboratory for overestimation under noisy soft Bellman backups.

Actions are discrete here, so every integral over the action space becomes a
sum; the Jensen / Tonelli / mean-value arguments behind the bounds carry over
to sums unchanged. Critic noise is drawn independently per (s, a) entry.

Conventions: ``P[s, a, s']`` is the transition tensor, ``R[s, a]`` the reward
matrix, and ``alpha_tilde`` the soft-max temperature of the optimality
backup. ``sigma`` always denotes the square root of the variance proxy.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import FAMILIES, sample_subgaussian
from .errors import DimensionError, DomainError

N_SIGMA = 3.0
ROW_SUM_TOL = 1e-12


@dataclass
class TabularMDP:
    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2] or self.P.shape[:2] != self.R.shape:
            raise DimensionError(f"P must be [S, A, S] and R [S, A]; got {self.P.shape}, {self.R.shape}")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=2) - 1.0) > ROW_SUM_TOL):
            raise DomainError("every P[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(self.R)):
            raise DomainError("R must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]


@dataclass
class TabularCriticDistribution:
    mu: np.ndarray
    sigma: np.ndarray
    family: str = "gaussian"

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.mu.shape).copy()
        if np.any(self.sigma < 0):
            raise DomainError("sigma must be >= 0")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")

    def sample(self, rng, n: int) -> np.ndarray:
        """``n`` independent critic tables, shape (n, S, A)."""
        return sample_subgaussian(self.family, self.mu, self.sigma, rng, (n,) + self.mu.shape)


def soft_value(Q, alpha_tilde):
    """alpha_tilde * log sum_a exp(Q / alpha_tilde) over the last axis, max-shifted."""
    if alpha_tilde <= 0:
        raise DomainError(f"alpha_tilde must be > 0, got {alpha_tilde}")
    return _scaled_lse(np.asarray(Q, dtype=float) / alpha_tilde, alpha_tilde)


def _scaled_lse(x, alpha_tilde):
    m = x.max(axis=-1, keepdims=True)
    return alpha_tilde * (m[..., 0] + np.log(np.exp(x - m).sum(axis=-1)))


def _expect_next(mdp, values):
    """sum_s' P[s, a, s'] * values[..., s'] -> shape (..., S, A)."""
    return np.einsum("sat,...t->...sa", mdp.P, values)


def soft_optimality_backup(mdp: TabularMDP, Q, alpha_tilde):
    return mdp.R + mdp.gamma * _expect_next(mdp, soft_value(Q, alpha_tilde))


def _check_policy(pi, shape):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != shape:
        raise DimensionError(f"policy shape {pi.shape} != {shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
        raise DomainError("invalid policy: rows must be probability vectors")
    return pi


def _xlogx_policy(pi):
    with np.errstate(divide="ignore"):
        return np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)


def soft_policy_backup(mdp: TabularMDP, Q, pi, alpha):
    """R + gamma * E_{s'} sum_{a'} pi(a'|s') (Q(s', a') - alpha log pi(a'|s'))."""
    pi = _check_policy(pi, mdp.R.shape)
    cont = (pi * (np.asarray(Q, dtype=float) - alpha * _xlogx_policy(pi))).sum(axis=1)
    return mdp.R + mdp.gamma * _expect_next(mdp, cont)


def _categorical(probs, rng):
    """One draw per leading index from categorical rows ``probs[..., k]``."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    return np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def pessimistic_backup(mdp: TabularMDP, crit: TabularCriticDistribution, pi, alpha, beta, rng):
    """One sample per (s, a) of R + gamma (mu(s',a') - beta sigma(s',a') - alpha log pi(a'|s'))."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    pi = _check_policy(pi, mdp.R.shape)
    s_next = _categorical(mdp.P, rng)
    a_next = _categorical(pi[s_next], rng)
    logpi = _xlogx_policy(pi)[s_next, a_next]
    mu = crit.mu[s_next, a_next]
    sig = crit.sigma[s_next, a_next]
    return mdp.R + mdp.gamma * (mu - beta * sig - alpha * logpi)


# Monte Carlo estimators ---------------------------------------------------------

@dataclass
class OverestimationEstimate:
    eps: np.ndarray      # estimated E[T*Q] - T*mu per (s, a)
    stderr: np.ndarray
    n_samples: int

    @property
    def ci(self):
        return N_SIGMA * self.stderr


def _mc_backup_gap(mdp, crit, alpha_tilde, n_samples, rng, shifts=(0.0,), chunk=20_000):
    """Mean and stderr of gamma * E_{s'}[V(Q - shift) - V(mu)] for each shift.

    Differences are taken per sample before averaging so a deterministic
    critic gives exactly zero. All shifts share the same critic draws.
    """
    base = soft_value(crit.mu, alpha_tilde)
    sums = [np.zeros(mdp.R.shape) for _ in shifts]
    sqs = [np.zeros(mdp.R.shape) for _ in shifts]
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        Q = crit.sample(rng, k)
        for i, shift in enumerate(shifts):
            shifted = Q if np.isscalar(shift) and shift == 0.0 else Q - shift
            y = mdp.gamma * _expect_next(mdp, soft_value(shifted, alpha_tilde) - base)
            sums[i] += y.sum(axis=0)
            sqs[i] += (y * y).sum(axis=0)
        done += k
    out = []
    for s, q in zip(sums, sqs):
        mean = s / n_samples
        var = np.maximum(q / n_samples - mean * mean, 0.0) * n_samples / max(n_samples - 1, 1)
        out.append((mean, np.sqrt(var / n_samples)))
    return out


def estimate_overestimation(mdp, crit, alpha_tilde, n_samples, rng) -> OverestimationEstimate:
    (mean, se), = _mc_backup_gap(mdp, crit, alpha_tilde, n_samples, rng)
    return OverestimationEstimate(mean, se, n_samples)


def theorem1_gap(mdp, crit, alpha_tilde):
    """Exact RHS of the sub-Gaussian bound minus T*mu, per (s, a)."""
    x = crit.mu / alpha_tilde
    bound = _scaled_lse(x + 0.5 * crit.sigma ** 2 / alpha_tilde ** 2, alpha_tilde)
    return mdp.gamma * _expect_next(mdp, bound - _scaled_lse(x, alpha_tilde))


def theorem2_bound(mdp, crit, alpha_tilde):
    """gamma / (2 alpha_tilde) * E_{s'}[max_a' sigma^2(s', a')]."""
    return mdp.gamma / (2.0 * alpha_tilde) * _expect_next(mdp, (crit.sigma ** 2).max(axis=1))


def corollary_beta(crit, alpha_tilde):
    """Smallest beta the pessimism result guarantees: max sigma / (2 alpha_tilde)."""
    return float(crit.sigma.max()) / (2.0 * alpha_tilde)


@dataclass
class TheoryReport:
    name: str
    passed: bool
    max_violation: float      # max over (s, a) of (estimate - bound - 3 se); <= 0 when passing
    worst_slack: float        # min over (s, a) of (bound - estimate)
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _compare(name, estimate, se, bound, extra=None, atol=1e-12):
    violation = estimate - bound - N_SIGMA * se
    rows = [{"s": int(s), "a": int(a), "eps_hat": float(estimate[s, a]), "bound": float(bound[s, a]),
             "slack": float(bound[s, a] - estimate[s, a]), "ci": float(N_SIGMA * se[s, a])}
            for s, a in np.ndindex(estimate.shape)]
    max_violation = float(violation.max())
    return TheoryReport(name, max_violation <= atol, max_violation, float((bound - estimate).min()),
                        rows, dict(extra or {}))


def verify_theorem1(mdp, crit, alpha_tilde, n_samples, rng) -> TheoryReport:
    """E[T*Q] <= R + gamma E_{s'} alpha~ log sum exp(mu/alpha~ + sigma^2 / (2 alpha~^2))."""
    est = estimate_overestimation(mdp, crit, alpha_tilde, n_samples, rng)
    return _compare("theorem1", est.eps, est.stderr, theorem1_gap(mdp, crit, alpha_tilde))


def verify_theorem2(mdp, crit, alpha_tilde, n_samples, rng) -> TheoryReport:
    """eps(s, a) <= gamma / (2 alpha~) E_{s'}[max_a' sigma^2]."""
    est = estimate_overestimation(mdp, crit, alpha_tilde, n_samples, rng)
    return _compare("theorem2", est.eps, est.stderr, theorem2_bound(mdp, crit, alpha_tilde))


def verify_corollary1(mdp, crit, alpha_tilde, n_samples, rng, beta=None, beta_grid=None,
                      pi=None, alpha=0.0) -> TheoryReport:
    """Check that the beta-shifted optimality backup does not exceed T*mu on average.

    Also scans ``beta_grid`` (sharing critic draws) for the smallest beta that
    passes empirically. With a policy ``pi`` the exact gap of the pessimistic
    policy-evaluation backup against the plain one is reported too.
    """
    beta = corollary_beta(crit, alpha_tilde) if beta is None else float(beta)
    grid = sorted(float(b) for b in (beta_grid if beta_grid is not None else ()))
    betas = [beta] + grid
    gaps = _mc_backup_gap(mdp, crit, alpha_tilde, n_samples, rng,
                          shifts=[b * crit.sigma for b in betas])
    (mean, se), grid_gaps = gaps[0], gaps[1:]
    sufficient = None
    for b, (m, s) in zip(grid, grid_gaps):
        if np.all(m <= N_SIGMA * s + 1e-12):
            sufficient = b
            break
    extra = {"beta": beta, "smallest_sufficient_beta": sufficient}
    if pi is not None:
        pess = soft_policy_backup(mdp, crit.mu - beta * crit.sigma, pi, alpha)
        extra["policy_backup_gap"] = float((pess - soft_policy_backup(mdp, crit.mu, pi, alpha)).max())
    return _compare("corollary1", mean, se, np.zeros_like(mean), extra)


# random instances & suites ----------------------------------------------------------

ALPHA_TILDES = (0.2, 1.0, 5.0)


def random_instance(rng, family="gaussian", alpha_tilde=1.0, max_states=5, max_actions=4,
                    min_actions=2, sigma_range=(0.0, 2.0), sigma=None):
    n_s = int(rng.integers(1, max_states + 1))
    n_a = int(rng.integers(min_actions, max_actions + 1))
    P = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
    P /= P.sum(axis=2, keepdims=True)
    mdp = TabularMDP(P, rng.uniform(-1.0, 1.0, (n_s, n_a)), float(rng.uniform(0.5, 0.99)))
    sig = rng.uniform(*sigma_range, (n_s, n_a)) if sigma is None else np.full((n_s, n_a), float(sigma))
    crit = TabularCriticDistribution(rng.uniform(-2.0, 2.0, (n_s, n_a)), sig, family)
    return mdp, crit, alpha_tilde


def suite_instances(n_instances, seed, families=("gaussian", "bounded-mixture"), sigma=None):
    rng = np.random.default_rng(seed)
    for k in range(n_instances):
        family = families[k % len(families)]
        alpha_tilde = ALPHA_TILDES[(k // len(families)) % len(ALPHA_TILDES)]
        yield random_instance(rng, family, alpha_tilde, sigma=sigma)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_instances: int
    n_violations: int
    worst_slack: float
    max_violation: float
    reports: list
    extra: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        msg = (f"{tag} {self.name}: {self.n_instances} instances, {self.n_violations} violations, "
               f"worst slack {self.worst_slack:.4g}, max violation {self.max_violation:.3g}")
        for k, v in self.extra.items():
            msg += f", {k}={v}"
        return msg


def _summarize(name, reports, extra=None, extra_ok=True):
    n_viol = sum(not r.passed for r in reports)
    return SuiteResult(name, n_viol == 0 and extra_ok, len(reports), n_viol,
                       min(r.worst_slack for r in reports), max(r.max_violation for r in reports),
                       reports, dict(extra or {}))


def run_suite(which, n_instances=100, n_samples=100_000, seed=0, sigma=None, beta_grid=None,
              families=("gaussian", "bounded-mixture")):
    """Run one verification suite over random instances.

    ``which`` is ``theorem1``, ``theorem2`` or ``corollary1``. The corollary
    suite also checks that beta = 0 shows positive overestimation on at least
    95% of the instances whenever the noise is non-degenerate.
    """
    instances = list(suite_instances(n_instances, seed, families, sigma))
    rng = np.random.default_rng([seed, 1])
    reports = []
    if which == "theorem1":
        for mdp, crit, at in instances:
            reports.append(verify_theorem1(mdp, crit, at, n_samples, rng))
        return _summarize("theorem1", reports)
    if which == "theorem2":
        for mdp, crit, at in instances:
            reports.append(verify_theorem2(mdp, crit, at, n_samples, rng))
        return _summarize("theorem2", reports)
    if which != "corollary1":
        raise ValueError(f"unknown suite {which!r}")
    positive = 0
    for mdp, crit, at in instances:
        rep = verify_corollary1(mdp, crit, at, n_samples, rng, beta_grid=beta_grid)
        zero = estimate_overestimation(mdp, crit, at, n_samples, rng)
        # an instance "shows" overestimation when its average eps-hat is
        # positive beyond 3 standard errors
        avg = float(zero.eps.mean())
        avg_se = float(np.sqrt((zero.stderr ** 2).sum()) / zero.eps.size)
        shows = avg > N_SIGMA * avg_se
        rep.extra["beta0_mean_eps"] = avg
        rep.extra["beta0_overestimates"] = shows
        positive += shows
        reports.append(rep)
    noisy = sigma is None or sigma > 0
    need = math.ceil(0.95 * n_instances)
    extra = {"beta0_overestimating": f"{positive}/{n_instances}"}
    return _summarize("corollary1", reports, extra, extra_ok=(positive >= need) if noisy else True)


def write_report_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "instance", "s", "a", "eps_hat", "bound", "slack", "ci"])
        for res in results:
            for k, rep in enumerate(res.reports):
                for row in rep.rows:
                    w.writerow([res.name, k, row["s"], row["a"], repr(row["eps_hat"]), repr(row["bound"]),
                                repr(row["slack"]), repr(row["ci"])])
