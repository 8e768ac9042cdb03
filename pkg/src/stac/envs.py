"""Desk-scale continuous-control environments.

``risky-pointmass-v0`` is a 2-D point mass that must reach the origin while a
circular danger zone at (0.5, 0.5) randomly hands out large penalties.
``point-reach-v0`` is the same geometry without slip or danger: a deterministic
task that a proportional controller solves optimally, used as a smoke test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    max_episode_steps: int
    action_low: float = -1.0
    action_high: float = 1.0


@dataclass(frozen=True)
class RiskyPointMassConfig:
    danger_center: tuple = (0.5, 0.5)
    danger_radius: float = 0.3
    goal: tuple = (0.0, 0.0)
    goal_radius: float = 0.05
    step_penalty: float = -0.1
    danger_penalty: float = -10.0
    penalty_prob_scale: float = 0.1
    penalty_prob_decay: float = 4.0
    max_move: float = 0.1
    slip_max: float = 0.02
    init_low: float = 0.3
    init_high: float = 1.0
    max_episode_steps: int = 200
    clamp_to_unit_square: bool = True
    penalty_enabled: bool = True
    avoid_danger_on_reset: bool = True


POINT_REACH_CONFIG = RiskyPointMassConfig(slip_max=0.0, penalty_enabled=False,
                                          avoid_danger_on_reset=False, max_episode_steps=50)


class PointMassEnv:
    """Gym-like API: ``reset(rng) -> state``, ``step(a) -> (state, reward, terminated, truncated)``."""

    def __init__(self, config: RiskyPointMassConfig = RiskyPointMassConfig(), rng=None):
        self.config = config
        self.spec = EnvSpec(2, 2, config.max_episode_steps)
        self.rng = np.random.default_rng() if rng is None else rng
        self._center = np.asarray(config.danger_center, dtype=float)
        self._goal = np.asarray(config.goal, dtype=float)
        self.pos = None
        self.steps = 0

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        cfg = self.config
        while True:
            pos = self.rng.uniform(cfg.init_low, cfg.init_high, size=2)
            if not cfg.avoid_danger_on_reset or not self.in_danger(pos):
                break
        self.pos = pos
        self.steps = 0
        return pos.copy()

    def in_danger(self, pos) -> bool:
        return float(np.linalg.norm(np.asarray(pos) - self._center)) < self.config.danger_radius

    def penalty_probability(self, pos) -> float:
        cfg = self.config
        r = float(np.linalg.norm(np.asarray(pos, dtype=float) - self._center))
        if r >= cfg.danger_radius:
            return 0.0
        return cfg.penalty_prob_scale * float(np.exp(-cfg.penalty_prob_decay * r * r / cfg.danger_radius ** 2))

    def step(self, action):
        if self.pos is None:
            raise UsageError("call reset() before step()")
        action = np.asarray(action, dtype=float)
        if action.shape != (2,):
            raise UsageError(f"action must have shape (2,), got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise UsageError(f"non-finite action {action}")
        cfg = self.config
        move = cfg.max_move * np.clip(action, -1.0, 1.0)
        if cfg.slip_max > 0:
            move = move + self.rng.uniform(-cfg.slip_max, cfg.slip_max, size=2)
        pos = self.pos + move
        if cfg.clamp_to_unit_square:
            pos = np.clip(pos, 0.0, 1.0)
        self.pos = pos
        self.steps += 1

        dist = float(np.linalg.norm(pos - self._goal))
        reward = -dist + cfg.step_penalty
        if cfg.penalty_enabled:
            p = self.penalty_probability(pos)
            if p > 0.0 and self.rng.random() < p:
                reward += cfg.danger_penalty
        terminated = dist <= cfg.goal_radius
        truncated = (not terminated) and self.steps >= cfg.max_episode_steps
        return pos.copy(), reward, terminated, truncated


class RiskyPointMass(PointMassEnv):
    def __init__(self, config: RiskyPointMassConfig = RiskyPointMassConfig(), rng=None):
        super().__init__(config, rng)


class PointReach(PointMassEnv):
    def __init__(self, config: RiskyPointMassConfig = POINT_REACH_CONFIG, rng=None):
        super().__init__(config, rng)


ENV_REGISTRY = {
    "risky-pointmass-v0": RiskyPointMass,
    "point-reach-v0": PointReach,
}


def make(env_id: str, rng=None, **overrides) -> PointMassEnv:
    try:
        cls = ENV_REGISTRY[env_id]
    except KeyError:
        raise UsageError(f"unknown env id {env_id!r}; known: {sorted(ENV_REGISTRY)}") from None
    env = cls(rng=rng)
    if overrides:
        env = cls(replace(env.config, **overrides), rng=rng)
    return env


def proportional_controller(state, gain: float = 10.0):
    """Drive straight at the origin, saturating each axis; optimal on point-reach."""
    return np.clip(-gain * np.asarray(state, dtype=float), -1.0, 1.0)


# trajectories -------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("step", "x", "y", "reward", "terminated")


def rollout(env: PointMassEnv, policy_fn, n_steps: int, rng=None):
    """Run ``n_steps`` env steps, resetting on episode end.

    Returns a list of episodes, each a list of (step, x, y, reward, terminated)
    rows where (x, y) is the position after the step.
    """
    episodes, rows = [], []
    state = env.reset(rng)
    for _ in range(n_steps):
        state, reward, terminated, truncated = env.step(policy_fn(state))
        rows.append((env.steps, float(state[0]), float(state[1]), float(reward), bool(terminated)))
        if terminated or truncated:
            episodes.append(rows)
            rows = []
            state = env.reset()
    if rows:
        episodes.append(rows)
    return episodes


def write_trajectory_csv(episodes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("episode",) + TRAJECTORY_COLUMNS)
        for k, ep in enumerate(episodes):
            for step, x, y, r, term in ep:
                w.writerow((k, step, repr(x), repr(y), repr(r), int(term)))


@dataclass
class Occupancy:
    fraction: float          # share of positions strictly inside the danger circle
    grid: np.ndarray         # counts, grid[i, j] for x-bin i and y-bin j
    x_edges: np.ndarray
    y_edges: np.ndarray
    n_positions: int


def danger_occupancy(trajectories, bins: int = 100, config: RiskyPointMassConfig = RiskyPointMassConfig()):
    """Danger-zone occupancy and a 2-D visit histogram over [0, 1]^2.

    ``trajectories`` may be rollout episodes (rows with x, y in columns 1-2)
    or arrays of positions with shape (n, 2).
    """
    chunks = []
    for traj in trajectories:
        arr = np.asarray(traj, dtype=float)
        if arr.size == 0:
            continue
        arr = arr.reshape(len(arr), -1)
        chunks.append(arr[:, 1:3] if arr.shape[1] == len(TRAJECTORY_COLUMNS) else arr[:, :2])
    if not chunks:
        raise UsageError("danger_occupancy needs at least one position")
    pos = np.concatenate(chunks)
    r = np.linalg.norm(pos - np.asarray(config.danger_center), axis=1)
    grid, xe, ye = np.histogram2d(pos[:, 0], pos[:, 1], bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    return Occupancy(float(np.mean(r < config.danger_radius)), grid, xe, ye, len(pos))
