"""End-to-end tests for the command line front end.

These go through ``cli.main`` directly (no subprocess) so exit codes and
stderr diagnostics can be asserted cheaply.  The heavier experiment suites
live in test_experiments.py; here we care about config handling, the output
contract, and determinism of the on-disk artifacts.
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest

import rankscape.cli as cli
from rankscape.cli import (
    ConfigError,
    apply_seed_override,
    config_hash,
    load_config,
    main,
    validate_config,
)

from rankscape import matcore
import rankscape.experiments as ex


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


SWEEP_TOML = """\
experiment = "sweep_lambda"
lambda_grid = [0.0, 1.5, 2.5, 3.5, 4.5]
rank = 5

[objective]
generator = "quadratic"
shape = [6, 5]
seed = 3
spectrum_lo = 1.0
target_rank = 4

[solver]
learning_rate = 0.05
max_steps = 4000
grad_tol = 1e-9

[init]
kind = "zero_b"
seed = 0
c = 0.1
"""


def _tree_bytes(root: Path):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


# ---------------------------------------------------------------------------
# config loading / validation


def test_load_config_roundtrip(tmp_path):
    p = _write(tmp_path, "a.toml", SWEEP_TOML)
    cfg, raw = load_config(p)
    assert cfg["experiment"] == "sweep_lambda"
    assert cfg["objective"]["generator"] == "quadratic"
    assert raw == SWEEP_TOML.encode()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_load_config_bad_toml(tmp_path):
    p = _write(tmp_path, "bad.toml", "experiment = [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_validate_config_accepts_canonical():
    validate_config(ex.planted_sweep_config())  # should not raise


def test_validate_config_reports_paths(tmp_path):
    cfg = {
        "experiment": "solve_full",
        "lam": -1.0,  # violates minimum
        "objective": {"generator": "quadratic", "seed": 1, "shape": [4, 3]},
        "bogus": 1,
    }
    with pytest.raises(ConfigError) as ei:
        validate_config(cfg)
    paths = {d["path"] for d in ei.value.details}
    assert "lam" in paths
    assert any("bogus" in p or p == "" for p in paths)


def test_validate_config_generator_requirements():
    cfg = {
        "experiment": "solve_full",
        "lam": 0.5,
        "objective": {"generator": "matrix_sensing", "seed": 1, "shape": [4, 3]},
    }
    # missing num_measurements / planted_rank
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_validate_config_rejects_unknown_init_kind():
    cfg = {
        "experiment": "solve_lora",
        "lam": 0.1,
        "rank": 2,
        "objective": {"generator": "quadratic", "seed": 1, "shape": [4, 3]},
        "solver": {"learning_rate": 0.1},
        "init": {"kind": "warmstart"},
    }
    with pytest.raises(ConfigError):
        validate_config(cfg)


# ---------------------------------------------------------------------------
# hashing and seed overrides


def test_config_hash_deterministic_and_sensitive():
    a = {"experiment": "solve_full", "lam": 0.5}
    b = {"lam": 0.5, "experiment": "solve_full"}  # key order irrelevant
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 12
    c = dict(a, lam=0.6)
    assert config_hash(c) != config_hash(a)


def test_apply_seed_override_rules():
    cfg = {
        "experiment": "classify",
        "objective": {"generator": "quadratic", "seed": 1, "shape": [4, 3]},
        "solver": {"learning_rate": 0.1, "seed": 9},
    }
    out = apply_seed_override(cfg, 42)
    assert out["objective"]["seed"] == 42
    assert out["solver"]["seed"] == 42
    assert cfg["objective"]["seed"] == 1  # original untouched

    # the pinned instance has no free seed: objective.seed must survive
    planted = {
        "experiment": "classify",
        "objective": {"generator": "planted_generic"},
    }
    out2 = apply_seed_override(planted, 42)
    assert "seed" not in out2["objective"]

    # absent tables are not invented
    assert "solver" not in out2


# ---------------------------------------------------------------------------
# main(): happy path


def test_main_sweep_lambda_end_to_end(tmp_path, capsys):
    cfg_path = _write(tmp_path, "sweep.toml", SWEEP_TOML)
    outdir = tmp_path / "runs"
    rc = main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(outdir)])
    assert rc == 0
    printed = capsys.readouterr().out.strip()
    run_dir = Path(printed)
    assert run_dir.parent == outdir / "sweep_lambda"

    # layout contract
    assert (run_dir / "config.toml").read_bytes() == SWEEP_TOML.encode()
    assert (run_dir / "trajectory.csv").is_file()
    report = json.loads((run_dir / "report.json").read_text())
    assert report["experiment"] == "sweep_lambda"
    assert report["config_hash"] == run_dir.name
    assert report["seed"] == 3
    assert report["config"]["lambda_grid"] == [0.0, 1.5, 2.5, 3.5, 4.5]

    # isotropic curvature: solutions are plain shrinkages of the target,
    # whose singular values are pinned to (4, 3, 2, 1) by the generator
    ranks = [r[0] for r in report["results"]["ranks"]]  # single layer
    assert ranks == [4, 3, 2, 1, 0]
    grid = report["results"]["grid"]
    for lam_val, r in zip(grid, ranks):
        run = next(p for p in report["results"]["runs"] if p["lam"] == lam_val)
        assert run["per_layer"][0]["truncated_rank"] == r

    # per-point artifacts
    for run in report["results"]["runs"]:
        sub = run_dir / "points" / run["label"]
        assert (sub / "trajectory.csv").is_file()
    merged = (run_dir / "trajectory.csv").read_text().splitlines()
    assert merged[0].startswith("run,")


def test_main_rerun_is_byte_identical(tmp_path, capsys):
    cfg_path = _write(tmp_path, "sweep.toml", SWEEP_TOML)
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(out1)]) == 0
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(out2)]) == 0
    capsys.readouterr()
    assert _tree_bytes(out1) == _tree_bytes(out2)


def test_main_jobs_do_not_change_artifacts(tmp_path, capsys):
    cfg_path = _write(tmp_path, "sweep.toml", SWEEP_TOML)
    out1 = tmp_path / "serial"
    out2 = tmp_path / "parallel"
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(out1)]) == 0
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(out2), "--jobs", "4"]) == 0
    capsys.readouterr()
    assert _tree_bytes(out1) == _tree_bytes(out2)


def test_deterministic_env_forces_serial(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DETERMINISTIC_ENV, "1")
    assert cli._jobs(8) == 1
    monkeypatch.setenv(cli.DETERMINISTIC_ENV, "0")
    assert cli._jobs(8) == 8
    monkeypatch.delenv(cli.DETERMINISTIC_ENV)
    assert cli._jobs(3) == 3


def test_main_seed_override_changes_run_dir(tmp_path, capsys):
    cfg_path = _write(tmp_path, "sweep.toml", SWEEP_TOML)
    outdir = tmp_path / "runs"
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(outdir)]) == 0
    base = Path(capsys.readouterr().out.strip())
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(outdir), "--seed", "17"]) == 0
    seeded = Path(capsys.readouterr().out.strip())
    assert seeded != base  # hash covers the overridden seed
    report = json.loads((seeded / "report.json").read_text())
    assert report["seed"] == 17
    assert report["config"]["objective"]["seed"] == 17


# ---------------------------------------------------------------------------
# main(): failure modes


def test_main_invalid_config_exits_2(tmp_path, capsys):
    bad = SWEEP_TOML.replace('generator = "quadratic"', 'generator = "mystery"')
    cfg_path = _write(tmp_path, "bad.toml", bad)
    rc = main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(tmp_path / "o")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert err["details"]  # at least one structured entry
    assert any("generator" in d["path"] for d in err["details"])


def test_main_unparseable_toml_exits_2(tmp_path, capsys):
    cfg_path = _write(tmp_path, "broken.toml", "experiment = [oops\n")
    rc = main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(tmp_path / "o")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"


def test_main_missing_file_exits_2(tmp_path, capsys):
    rc = main(["sweep_lambda", "--config", str(tmp_path / "ghost.toml")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"


def test_main_subcommand_mismatch_exits_2(tmp_path, capsys):
    cfg_path = _write(tmp_path, "sweep.toml", SWEEP_TOML)
    rc = main(["classify", "--config", str(cfg_path), "--outdir", str(tmp_path / "o")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert "sweep_lambda" in err["message"]


def test_main_runtime_failure_exits_3(tmp_path, capsys):
    # schema-valid rank_dynamics config that cannot produce enough history:
    # budget of 3 steps with a 50-step snapshot stride -> insufficient history.
    toml = """\
experiment = "rank_dynamics"
lam = 0.2
rank = 2

[objective]
generator = "mlp"
seed = 0
widths = [4, 5, 3]
n_samples = 6

[solver]
learning_rate = 0.001
max_steps = 3
grad_tol = 1e-15
batch_size = 1
snapshot_stride = 50

[dynamics]
epsilon = 0.5
"""
    cfg_path = _write(tmp_path, "dyn.toml", toml)
    rc = main(["rank_dynamics", "--config", str(cfg_path), "--outdir", str(tmp_path / "o")])
    assert rc == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "runtime"
    assert err["type"] == "InsufficientHistoryError"


def test_main_no_stray_files_on_config_error(tmp_path, capsys):
    cfg_path = _write(tmp_path, "broken.toml", "experiment = [oops\n")
    outdir = tmp_path / "o"
    assert main(["sweep_lambda", "--config", str(cfg_path), "--outdir", str(outdir)]) == 2
    capsys.readouterr()
    assert not outdir.exists()


# ---------------------------------------------------------------------------
# a second experiment through the CLI, to exercise classify + constants tables


def test_main_classify_planted_with_overrides(tmp_path, capsys):
    toml = """\
experiment = "classify"
epsilon = 0.8

[objective]
generator = "planted_generic"

[solver]
learning_rate = 6e-3
max_steps = 60000
grad_tol = 1e-7

[init]
kind = "zero_b"
seed = 1
c = 0.1

[certificate]
tol1 = 5e-5
"""
    cfg_path = _write(tmp_path, "cls.toml", toml)
    rc = main(["classify", "--config", str(cfg_path), "--outdir", str(tmp_path / "o")])
    assert rc == 0
    run_dir = Path(capsys.readouterr().out.strip())
    report = json.loads((run_dir / "report.json").read_text())
    res = report["results"]
    assert res["verdict"] == "global"
    assert res["classification"]["constants"]["source"] == "analytic"
    assert res["value_gap_rel"] <= 1e-9
    assert report["seed"] == 0  # planted instance exposes no objective seed
