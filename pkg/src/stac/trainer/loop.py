"""Off-policy training loop, evaluation protocol and metric sinks."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..envs import PointMassEnv, make
from ..errors import TrainingHealthError, UsageError
from ..replay import ReplayBuffer
from .algorithms import Algorithm, build_algorithm
from .config import TrainConfig

METRIC_COLUMNS = ("step", "return", "value_error", "alpha", "critic_loss", "actor_loss", "sigma_mean")


@dataclass
class EvalRecord:
    env_step: int
    episodic_return: float
    value_estimation_error: float
    danger_occupancy: float | None = None
    wall_time: float = 0.0
    alpha: float = float("nan")
    critic_loss: float = float("nan")
    actor_loss: float = float("nan")
    sigma_mean: float = float("nan")

    def metric_row(self):
        return (self.env_step, self.episodic_return, self.value_estimation_error, self.alpha,
                self.critic_loss, self.actor_loss, self.sigma_mean)


class CsvMetricSink:
    """Append-only CSV of evaluation records; floats written with ``repr`` so reruns are byte-identical."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRIC_COLUMNS)

    def __call__(self, record: EvalRecord):
        self._writer.writerow([v if isinstance(v, int) else repr(float(v)) for v in record.metric_row()])
        self._fh.flush()

    def close(self):
        self._fh.close()


def discounted_suffix_returns(rewards, gamma):
    """G_t = sum_{k >= t} gamma^(k - t) r_k for every t of one episode."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def run_eval_episode(algo: Algorithm, env: PointMassEnv, rng, gamma):
    """One deterministic episode. Returns (return, value error, positions)."""
    s = env.reset(rng)
    states, actions, rewards, positions = [], [], [], []
    while True:
        a, _ = algo.policy.act(s, mode="eval")
        s_next, r, terminated, truncated = env.step(a)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        positions.append(s_next)
        s = s_next
        if terminated or truncated:
            break
    q_pred = algo.value_estimate(np.asarray(states), np.asarray(actions))
    value_error = float(np.mean(q_pred - discounted_suffix_returns(rewards, gamma)))
    return float(np.sum(rewards)), value_error, np.asarray(positions)


def evaluate(algo: Algorithm, env: PointMassEnv, n_episodes: int, rng, gamma=0.99, env_step=0) -> EvalRecord:
    """Average return and value-estimation error over deterministic episodes (dropout off)."""
    start = time.perf_counter()
    returns, errors, positions = [], [], []
    for _ in range(n_episodes):
        ret, err, pos = run_eval_episode(algo, env, rng, gamma)
        returns.append(ret)
        errors.append(err)
        positions.append(pos)
    occupancy = None
    if env.config.penalty_enabled:
        pos = np.concatenate(positions)
        occupancy = float(np.mean([env.in_danger(p) for p in pos]))
    return EvalRecord(env_step, float(np.mean(returns)), float(np.mean(errors)), occupancy,
                      time.perf_counter() - start)


@dataclass
class TrainResult:
    config: TrainConfig
    algorithm: Algorithm
    records: list = field(default_factory=list)
    first_update_step: int | None = None
    last_stats: dict = field(default_factory=dict)


def _streams(seed):
    names = ("init", "env", "act", "update", "replay", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def train(config: TrainConfig, env: PointMassEnv | None = None, sinks=(), eval_env=None,
          progress=None) -> TrainResult:
    """Run the off-policy loop for ``config.total_steps`` environment steps.

    Before ``learning_starts`` actions are uniform on [-1, 1]^d (when warm-up
    is enabled) and no gradient step is taken; from then on every env step
    is followed by ``utd_ratio`` gradient phases. Every ``eval_interval``
    steps one deterministic evaluation episode is logged to each sink.
    """
    rngs = _streams(config.seed)
    env = make(config.env_id, rng=rngs["env"]) if env is None else env
    eval_env = make(config.env_id, rng=rngs["eval"]) if eval_env is None else eval_env
    spec = env.spec
    algo = build_algorithm(config, spec.state_dim, spec.action_dim, rngs["init"])
    buffer = ReplayBuffer(spec.state_dim, spec.action_dim, min(config.buffer_capacity, max(config.total_steps, 1)))
    result = TrainResult(config, algo)
    stats = {}

    s = env.reset(rngs["env"])
    for t in range(config.total_steps):
        if config.warmup_random_actions and t < config.learning_starts:
            a = rngs["act"].uniform(-1.0, 1.0, spec.action_dim)
        else:
            a, _ = algo.policy.act(s, mode="train", rng=rngs["act"])
        s_next, r, terminated, truncated = env.step(a)
        buffer.add(s, a, r, s_next, terminated)
        s = env.reset() if (terminated or truncated) else s_next
        env_step = t + 1

        if env_step >= config.learning_starts:
            if result.first_update_step is None:
                result.first_update_step = env_step
            for _ in range(config.utd_ratio):
                batch = buffer.sample(config.batch_size, rngs["replay"])
                try:
                    stats = algo.update(batch, rngs["update"])
                except TrainingHealthError as exc:
                    exc.snapshot.setdefault("env_step", env_step)
                    exc.snapshot.setdefault("alpha", algo.alpha)
                    raise
            result.last_stats = stats

        if env_step % config.eval_interval == 0:
            rec = evaluate(algo, eval_env, config.eval_episodes, rngs["eval"], config.gamma, env_step)
            rec.alpha = algo.alpha
            rec.critic_loss = stats.get("critic_loss", float("nan"))
            rec.actor_loss = stats.get("actor_loss", float("nan"))
            rec.sigma_mean = stats.get("sigma_mean", float("nan"))
            result.records.append(rec)
            for sink in sinks:
                sink(rec)
            if progress is not None:
                progress(rec)
    return result


# artifacts ------------------------------------------------------------------------

def save_artifact(result_or_algo, path):
    """Store network weights plus the resolved config in a single ``.npz``."""
    algo = result_or_algo.algorithm if isinstance(result_or_algo, TrainResult) else result_or_algo
    meta = {"config": algo.config.to_dict(), "state_dim": algo.state_dim, "action_dim": algo.action_dim}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **algo.state_dict())


def load_artifact(path) -> Algorithm:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"artifact not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        cfg = TrainConfig(**meta["config"])
        algo = build_algorithm(cfg, meta["state_dim"], meta["action_dim"], np.random.default_rng(0))
        algo.policy.net.load_state_dict({k[len("actor/"):]: data[k] for k in data.files if k.startswith("actor/")})
        for i, c in enumerate(algo.critics):
            prefix = f"critic{i}/"
            c.net.load_state_dict({k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)})
            algo.lagged[i].net.load_state_dict(c.net.state_dict())
        algo.temperature.log_alpha.assign(data["log_alpha"])
    return algo
