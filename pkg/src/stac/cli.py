"""Command line for stac: train, evaluate, sweep, verify-theory, export-heatmap.

Exit codes: 0 success, 1 usage error, 2 training divergence, 3 theorem violation.
The default output root is ``$STAC_OUTPUT_ROOT`` (falls back to ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .envs import danger_occupancy, make, rollout
from .errors import StacError, TrainingHealthError, UsageError
from .theory import run_suite, write_report_csv
from .trainer import CsvMetricSink, evaluate, load_artifact, load_config_file, resolve_config, save_artifact, train
from .trainer.sweep import DEFAULT_BETAS, DROPOUT_CONFIGS, sweep

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VIOLATION = 0, 1, 2, 3
log = logging.getLogger("stac")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def output_root() -> Path:
    return Path(os.environ.get("STAC_OUTPUT_ROOT", "runs"))


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of stop) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(max(n, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"malformed grid {text!r}; expected start:stop:step or a comma list") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma list of integers, got {text!r}") from None


def _dropout_pairs(text):
    pairs = []
    for item in text.split(","):
        try:
            ad, cd = item.split("/")
            pairs.append((float(ad), float(cd)))
        except ValueError:
            raise UsageError(f"dropout pairs look like 0.01/0,0/0.01; got {item!r}") from None
    return pairs


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# config flags shared by train and sweep ----------------------------------------------

_CONFIG_FLAGS = [
    ("--env", "env_id", str), ("--algo", "algorithm", str), ("--beta", "beta", float),
    ("--steps", "total_steps", int), ("--seed", "seed", int), ("--gamma", "gamma", float),
    ("--rho", "rho", float), ("--critic-lr", "critic_lr", float), ("--actor-lr", "actor_lr", float),
    ("--alpha-lr", "alpha_lr", float), ("--init-alpha", "init_alpha", float),
    ("--target-entropy", "target_entropy", float), ("--buffer-capacity", "buffer_capacity", int),
    ("--batch-size", "batch_size", int), ("--learning-starts", "learning_starts", int),
    ("--utd-ratio", "utd_ratio", int), ("--eval-interval", "eval_interval", int),
    ("--actor-dropout", "actor_dropout", float), ("--critic-dropout", "critic_dropout", float),
]


def _add_config_flags(p, skip=()):
    for flag, dest, typ in _CONFIG_FLAGS:
        if dest not in skip:
            p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--hidden-dims", dest="hidden_dims", default=None, help="comma list, e.g. 64,64")
    p.add_argument("--config", default=None, help="YAML/JSON config file or a run manifest")
    p.add_argument("--preset", default=None, help="named preset (defaults to the env id)")


def _resolve(args, skip=()):
    flags = {dest: getattr(args, dest) for _, dest, _ in _CONFIG_FLAGS if dest not in skip}
    if args.hidden_dims is not None:
        flags["hidden_dims"] = tuple(_ints(args.hidden_dims))
    file_values = load_config_file(args.config) if args.config else None
    return resolve_config(flags, file_values, args.preset)


# commands ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.output) if args.output else (
        output_root() / f"{cfg.env_id}_{cfg.algorithm}_beta{cfg.beta:g}_seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "env_id": cfg.env_id, "output_dir": str(out),
                "code_version": __version__, "started_at": _now(), "status": "running"}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    sink = CsvMetricSink(out / "metrics.csv")

    def progress(rec):
        log.info("step %d return %.3f value_error %.3f alpha %.4f", rec.env_step, rec.episodic_return,
                 rec.value_estimation_error, rec.alpha)

    try:
        result = train(cfg, sinks=[sink], progress=progress)
    except TrainingHealthError as exc:
        manifest.update(status="diverged", finished_at=_now(), error=str(exc), snapshot=exc.snapshot)
        manifest_path.write_text(json.dumps(manifest, indent=2, default=float))
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        sink.close()
    save_artifact(result, out / "policy.npz")
    manifest.update(status="completed", finished_at=_now())
    manifest_path.write_text(json.dumps(manifest, indent=2))
    last = result.records[-1].episodic_return if result.records else float("nan")
    print(f"run directory: {out} (final eval return {last:.3f})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    algo = load_artifact(args.artifact)
    env_id = args.env or algo.config.env_id
    env = make(env_id)
    rec = evaluate(algo, env, args.episodes, np.random.default_rng(args.seed), algo.config.gamma)
    summary = {"env_id": env_id, "episodes": args.episodes, "return": rec.episodic_return,
               "value_error": rec.value_estimation_error, "danger_occupancy": rec.danger_occupancy}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _resolve(args, skip=("beta", "seed", "actor_dropout", "critic_dropout"))
    betas = parse_grid(args.betas)
    dropouts = _dropout_pairs(args.dropouts)
    seeds = _ints(args.seeds)
    out = Path(args.output) if args.output else output_root() / f"sweep_{base.env_id}_{base.algorithm}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = sweep(base, betas, dropouts, seeds, window_fraction=args.window, workers=args.workers)
    except TrainingHealthError as exc:
        print(f"a sweep run diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    result.write_csv(out / "table.csv")
    (out / "manifest.json").write_text(json.dumps(
        {"config": base.to_dict(), "betas": betas, "dropouts": dropouts, "seeds": seeds,
         "window_fraction": args.window, "code_version": __version__, "finished_at": _now()}, indent=2))
    print(result.format())
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    if args.samples < 10_000:
        warnings.warn(f"only {args.samples} Monte Carlo samples; confidence intervals will be wide", stacklevel=1)
    beta_grid = parse_grid(args.beta_grid) if args.beta_grid else None
    families = tuple(args.families.split(","))
    results = []
    for which in ("theorem1", "theorem2", "corollary1"):
        res = run_suite(which, args.instances, args.samples, args.seed, sigma=args.sigma,
                        beta_grid=beta_grid, families=families)
        results.append(res)
        print(res.line())
    out = Path(args.output) if args.output else output_root() / "theory"
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(results, out / "slack_report.csv")
    if beta_grid is not None:
        with open(out / "beta_scan.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance", "corollary_beta", "smallest_sufficient_beta"])
            for k, rep in enumerate(results[2].reports):
                w.writerow([k, repr(rep.extra["beta"]), rep.extra["smallest_sufficient_beta"]])
    return EXIT_OK if all(r.passed for r in results) else EXIT_VIOLATION


def cmd_export_heatmap(args) -> int:
    algo = load_artifact(args.artifact)
    env = make(args.env or algo.config.env_id)
    if args.steps < 1:
        raise UsageError("--steps must be >= 1 (an empty trajectory has no occupancy)")

    def policy(s):
        return algo.policy.act(s, mode="eval")[0]

    episodes = rollout(env, policy, args.steps, np.random.default_rng(args.seed))
    occ = danger_occupancy(episodes, bins=args.bins, config=env.config)
    out = Path(args.output) if args.output else output_root() / "heatmap.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, occ.grid, delimiter=",", fmt="%d")
    print(json.dumps({"positions": occ.n_positions, "danger_occupancy": occ.fraction,
                      "grid": str(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one agent and write metrics.csv, manifest.json, policy.npz")
    _add_config_flags(t)
    t.add_argument("--output", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run deterministic evaluation episodes of a saved policy")
    e.add_argument("--artifact", required=True)
    e.add_argument("--env", default=None)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="grid over beta x dropout x seed, IQM of the final evaluations")
    _add_config_flags(s, skip=("beta", "seed", "actor_dropout", "critic_dropout"))
    s.add_argument("--betas", default=",".join(f"{b:g}" for b in DEFAULT_BETAS))
    s.add_argument("--dropouts", default=",".join(f"{a:g}/{c:g}" for a, c in DROPOUT_CONFIGS))
    s.add_argument("--seeds", default="0")
    s.add_argument("--window", type=float, default=0.01, help="fraction of final evaluations aggregated")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-theory", help="Monte Carlo checks of the overestimation bounds")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--sigma", type=float, default=None, help="use this sigma everywhere")
    v.add_argument("--beta-grid", default=None, help="start:stop:step, e.g. 0:0.5:0.125")
    v.add_argument("--families", default="gaussian,bounded-mixture")
    v.add_argument("--output", default=None)
    v.set_defaults(func=cmd_verify_theory)

    h = sub.add_parser("export-heatmap", help="occupancy grid CSV from evaluation roll-outs")
    h.add_argument("--artifact", required=True)
    h.add_argument("--env", default=None)
    h.add_argument("--steps", type=int, default=500)
    h.add_argument("--bins", type=int, default=100)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--output", default=None)
    h.set_defaults(func=cmd_export_heatmap)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except (StacError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
