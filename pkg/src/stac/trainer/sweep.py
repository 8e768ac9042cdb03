"""Grid sweeps over (beta, actor dropout, critic dropout, seed) aggregated by IQM."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import trim_mean

from .config import TrainConfig
from .loop import train

DEFAULT_BETAS = (0.0, 0.125, 0.25, 0.375, 0.5)
DROPOUT_CONFIGS = ((0.0, 0.0), (0.01, 0.0), (0.0, 0.01), (0.01, 0.01))


def iqm(values) -> float:
    """Inter-quartile mean: the mean of the middle half after dropping 25% at each end."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("iqm of an empty sequence")
    return float(trim_mean(values, 0.25))


def final_window(returns, fraction=0.01):
    """The last ``ceil(fraction * n)`` evaluation returns (at least one)."""
    returns = list(returns)
    if not returns:
        return []
    k = max(1, math.ceil(fraction * len(returns)))
    return returns[-k:]


@dataclass
class SweepResult:
    betas: tuple
    dropouts: tuple
    seeds: tuple
    # (beta, actor_dropout, critic_dropout) -> list of per-seed final-window returns
    windows: dict = field(default_factory=dict)

    def cell(self, beta, actor_dropout, critic_dropout) -> float:
        pooled = [v for w in self.windows[(beta, actor_dropout, critic_dropout)] for v in w]
        return iqm(pooled)

    def table(self):
        """Rows are dropout configurations, columns are beta levels."""
        return [[self.cell(b, ad, cd) for b in self.betas] for ad, cd in self.dropouts]

    def format(self) -> str:
        head = "dropout (actor/critic) | " + " | ".join(f"beta={b:g}" for b in self.betas)
        lines = [head, "-" * len(head)]
        for (ad, cd), row in zip(self.dropouts, self.table()):
            lines.append(f"{ad:g}/{cd:g} | " + " | ".join(f"{v:.3f}" for v in row))
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["actor_dropout", "critic_dropout", *[f"beta={b:g}" for b in self.betas]])
            for (ad, cd), row in zip(self.dropouts, self.table()):
                w.writerow([ad, cd, *[repr(v) for v in row]])


def _run_cell(config: TrainConfig):
    res = train(config)
    return [r.episodic_return for r in res.records]


def sweep(base: TrainConfig, betas=DEFAULT_BETAS, dropouts=DROPOUT_CONFIGS, seeds=(0,),
          window_fraction=0.01, workers=1, runner=None) -> SweepResult:
    """Train every grid point and aggregate the final evaluation window per cell.

    Runs are independent; ``workers > 1`` fans them out over processes.
    ``runner(config) -> list of returns`` replaces the default training call.
    """
    runner = _run_cell if runner is None else runner
    grid = list(itertools.product(betas, dropouts, seeds))
    configs = [dataclasses.replace(base, beta=b, actor_dropout=ad, critic_dropout=cd, seed=s)
               for b, (ad, cd), s in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(runner, configs))
    else:
        outputs = [runner(c) for c in configs]
    result = SweepResult(tuple(betas), tuple(dropouts), tuple(seeds))
    for (b, (ad, cd), _), returns in zip(grid, outputs):
        result.windows.setdefault((b, ad, cd), []).append(final_window(returns, window_fraction))
    return result
