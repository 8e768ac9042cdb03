"""Training configuration, per-environment presets and precedence resolution."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..errors import UsageError

ALGORITHMS = ("stac", "sac", "estac")


@dataclass
class TrainConfig:
    env_id: str = "risky-pointmass-v0"
    algorithm: str = "stac"
    beta: float = 0.0
    gamma: float = 0.99
    rho: float = 0.995
    critic_lr: float = 3e-4
    actor_lr: float = 3e-4
    alpha_lr: float = 3e-4
    init_alpha: float = 1.0
    target_entropy: float | None = None   # None -> -action_dim
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    learning_starts: int = 10_000
    utd_ratio: int = 1
    total_steps: int = 50_000
    eval_interval: int = 1_000
    eval_episodes: int = 1
    actor_dropout: float = 0.0
    critic_dropout: float = 0.0
    hidden_dims: tuple = (256, 256)
    layer_norm: bool = True
    warmup_random_actions: bool = True
    target_dropout: bool = True           # dropout active in the lagged critic when building targets
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self):
        def bad(name, why):
            raise UsageError(f"invalid config field '{name}': {why} (got {getattr(self, name)!r})")

        if self.algorithm not in ALGORITHMS:
            bad("algorithm", f"must be one of {ALGORITHMS}")
        if not self.beta >= 0:
            bad("beta", "must be >= 0")
        if not 0 <= self.gamma < 1:
            bad("gamma", "must lie in [0, 1)")
        if not 0 <= self.rho <= 1:
            bad("rho", "must lie in [0, 1]")
        for name in ("critic_lr", "actor_lr", "alpha_lr", "init_alpha"):
            if not getattr(self, name) > 0:
                bad(name, "must be > 0")
        for name in ("buffer_capacity", "batch_size", "utd_ratio", "eval_interval", "eval_episodes"):
            if int(getattr(self, name)) < 1:
                bad(name, "must be >= 1")
        for name in ("learning_starts", "total_steps"):
            if int(getattr(self, name)) < 0:
                bad(name, "must be >= 0")
        for name in ("actor_dropout", "critic_dropout"):
            if not 0 <= getattr(self, name) < 1:
                bad(name, "must lie in [0, 1)")
        if not self.hidden_dims or any(h <= 0 for h in self.hidden_dims):
            bad("hidden_dims", "must be a non-empty list of positive widths")

    def resolved_target_entropy(self, action_dim: int) -> float:
        return -float(action_dim) if self.target_entropy is None else float(self.target_entropy)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


FIELD_NAMES = {f.name for f in fields(TrainConfig)}

# Published per-environment settings: target entropy, pessimism, actor / critic dropout.
BENCHMARK_PRESETS = {
    "Ant-v4": dict(target_entropy=-4, beta=0.25, actor_dropout=0.01, critic_dropout=0.01),
    "BipedalWalker-v3": dict(target_entropy=-2, beta=0.375, actor_dropout=0.0, critic_dropout=0.01),
    "BipedalWalkerHardcore-v3": dict(target_entropy=-2, beta=0.125, actor_dropout=0.01, critic_dropout=0.0),
    "HalfCheetah-v4": dict(target_entropy=-3, beta=0.0, actor_dropout=0.0, critic_dropout=0.0),
    "Hopper-v4": dict(target_entropy=-1, beta=0.5, actor_dropout=0.01, critic_dropout=0.01),
    "Humanoid-v4": dict(target_entropy=-8, beta=0.25, actor_dropout=0.01, critic_dropout=0.0),
    "LunarLander-v3": dict(target_entropy=-2, beta=0.0, actor_dropout=0.01, critic_dropout=0.01),
    "Swimmer-v4": dict(target_entropy=-1, beta=0.0, actor_dropout=0.01, critic_dropout=0.0),
    "Walker2d-v4": dict(target_entropy=-3, beta=0.125, actor_dropout=0.01, critic_dropout=0.0),
}

# Desk-scale environments shipped with the package. Smaller nets and batches keep
# a run within minutes on one CPU core; the lower initial temperature suits the
# short horizons (rewards are O(0.1) per step).
DESK_PRESETS = {
    "risky-pointmass-v0": dict(target_entropy=-2, beta=0.25, actor_dropout=0.01, critic_dropout=0.01,
                               hidden_dims=(64, 64), batch_size=128, init_alpha=0.1),
    "point-reach-v0": dict(target_entropy=-4, beta=0.0, actor_dropout=0.01, critic_dropout=0.01,
                           hidden_dims=(64, 64), batch_size=128, init_alpha=0.1, learning_starts=5_000,
                           total_steps=20_000),
}

PRESETS = {**BENCHMARK_PRESETS, **DESK_PRESETS}


def load_config_file(path) -> dict:
    """Read a YAML or JSON key-value tree; a run manifest's ``config`` block is accepted too."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping at the top level")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    unknown = sorted(set(data) - FIELD_NAMES)
    if unknown:
        raise UsageError(f"unknown config field(s) in {path}: {', '.join(unknown)}")
    return data


def resolve_config(flags: dict | None = None, file_values: dict | None = None,
                   preset: str | None = None) -> TrainConfig:
    """Merge sources with precedence flags > config file > preset > defaults."""
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    file_values = dict(file_values or {})
    env_id = flags.get("env_id", file_values.get("env_id", TrainConfig.env_id))
    name = preset or env_id
    merged = dict(PRESETS.get(name, {}))
    merged.update(file_values)
    merged.update(flags)
    merged.setdefault("env_id", env_id)
    unknown = sorted(set(merged) - FIELD_NAMES)
    if unknown:
        raise UsageError(f"unknown config field(s): {', '.join(unknown)}")
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def config_from_json(text: str) -> TrainConfig:
    return TrainConfig(**json.loads(text))
