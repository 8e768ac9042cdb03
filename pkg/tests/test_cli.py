import csv
import json

import numpy as np
import pytest

from stac.cli import build_parser, main, parse_grid
from stac.errors import UsageError

SMALL = ["--steps", "60", "--learning-starts", "20", "--eval-interval", "20", "--batch-size", "8",
         "--hidden-dims", "16,16"]


@pytest.fixture
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    out = root / "run"
    assert main(["train", "--env", "risky-pointmass-v0", "--seed", "1", "--output", str(out), *SMALL]) == 0
    return out


def test_train_writes_run_directory(trained):
    assert sorted(p.name for p in trained.iterdir()) == ["manifest.json", "metrics.csv", "policy.npz"]
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["env_id"] == "risky-pointmass-v0" and manifest["seed"] == 1
    assert manifest["config"]["hidden_dims"] == [16, 16]
    assert {"started_at", "finished_at", "output_dir", "code_version"} <= set(manifest)
    rows = list(csv.reader(open(trained / "metrics.csv")))
    assert [r[0] for r in rows[1:]] == ["20", "40", "60"]


def test_rerun_from_manifest_is_bit_identical(trained, tmp_path):
    out = tmp_path / "again"
    assert main(["train", "--config", str(trained / "manifest.json"), "--output", str(out)]) == 0
    assert (out / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()


def test_env_var_sets_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("STAC_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["train", "--env", "point-reach-v0", "--beta", "0.5", *SMALL]) == 0
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and (runs[0] / "manifest.json").exists()
    assert "beta0.5" in runs[0].name


def test_negative_beta_is_usage_error_naming_field(tmp_path, capsys):
    assert main(["train", "--beta", "-1", "--output", str(tmp_path / "x")]) == 1
    assert "beta" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("argv", [["train", "--env", "Pong-v0"], ["train", "--steps", "abc"], ["frobnicate"],
                                  ["train", "--config", "/nonexistent.yaml"]])
def test_bad_invocations_exit_1(argv, tmp_path, capsys):
    assert main([*argv, "--output", str(tmp_path / "o")] if argv[0] == "train" else argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_omitted_flags_fall_back_to_published_defaults():
    from stac.cli import _resolve
    args = build_parser().parse_args(["train", "--env", "Hopper-v4"])
    cfg = _resolve(args)
    assert (cfg.batch_size, cfg.rho, cfg.critic_lr, cfg.actor_lr) == (256, 0.995, 3e-4, 3e-4)
    assert (cfg.target_entropy, cfg.beta) == (-1, 0.5)


def test_divergence_exits_2_and_records_snapshot(tmp_path, monkeypatch):
    from stac.trainer import STAC
    monkeypatch.setattr(STAC, "td_targets", lambda self, batch, rng: np.full(len(batch.r), np.inf))
    out = tmp_path / "div"
    assert main(["train", "--env", "point-reach-v0", "--output", str(out), *SMALL]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "diverged" and manifest["snapshot"]["env_step"] == 20


def test_evaluate_prints_summary(trained, capsys):
    assert main(["evaluate", "--artifact", str(trained / "policy.npz"), "--episodes", "2"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["episodes"] == 2 and 0.0 <= summary["danger_occupancy"] <= 1.0


# verify-theory --------------------------------------------------------------------------

def test_verify_theory_small_run(tmp_path, capsys):
    code = main(["verify-theory", "--instances", "4", "--samples", "10000", "--output", str(tmp_path)])
    lines = capsys.readouterr().out.strip().splitlines()
    assert code == 0
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)
    rows = list(csv.DictReader(open(tmp_path / "slack_report.csv")))
    assert rows and {"suite", "instance"} <= set(rows[0])


def test_verify_theory_sigma_zero_reports_exact_zero(tmp_path, capsys):
    with pytest.warns(UserWarning, match="samples"):
        code = main(["verify-theory", "--instances", "3", "--samples", "2000", "--sigma", "0",
                     "--output", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "slack_report.csv")))
    assert all(float(r["eps_hat"]) == 0.0 for r in rows)


def test_verify_theory_beta_grid(tmp_path, capsys):
    assert main(["verify-theory", "--instances", "3", "--samples", "10000", "--beta-grid", "0:0.5:0.125",
                 "--output", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "beta_scan.csv")))
    assert len(rows) == 3


def test_parse_grid():
    assert parse_grid("0:0.5:0.125") == [0.0, 0.125, 0.25, 0.375, 0.5]
    assert parse_grid("0.1,0.2") == [0.1, 0.2]
    for bad in ("0:1", "0:1:0", "a,b"):
        with pytest.raises(UsageError):
            parse_grid(bad)


# export-heatmap -------------------------------------------------------------------------

def test_heatmap_conserves_positions(trained, tmp_path, capsys):
    out = tmp_path / "heat.csv"
    assert main(["export-heatmap", "--artifact", str(trained / "policy.npz"), "--output", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    grid = np.loadtxt(out, delimiter=",")
    assert grid.shape == (100, 100)
    assert grid.sum(axis=0).sum() == grid.sum(axis=1).sum() == info["positions"] == 500


def test_heatmap_errors(trained, tmp_path, capsys):
    assert main(["export-heatmap", "--artifact", str(tmp_path / "none.npz")]) == 1
    assert "not found" in capsys.readouterr().err
    assert main(["export-heatmap", "--artifact", str(trained / "policy.npz"), "--steps", "0",
                 "--output", str(tmp_path / "h.csv")]) == 1
    assert "empty" in capsys.readouterr().err


def test_sweep_command_writes_table(tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "--env", "point-reach-v0", "--betas", "0,0.5", "--dropouts", "0/0", "--seeds", "0",
                 "--output", str(out), *SMALL]) == 0
    assert "beta=0.5" in capsys.readouterr().out
    assert (out / "table.csv").exists() and (out / "manifest.json").exists()
