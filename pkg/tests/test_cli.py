import csv
import os

import numpy as np
import pytest

from onlinenorm.cli import main


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_no_arguments_prints_usage_and_exits_one(capsys):
    code, out, err = run_cli([], capsys)
    assert code == 1
    assert "usage" in (out + err).lower()


def test_unknown_subcommand_exits_one(capsys):
    code, _, _ = run_cli(["frobnicate"], capsys)
    assert code == 1


def test_selftest_passes(capsys):
    code, out, _ = run_cli(["selftest"], capsys)
    assert code == 0
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) >= 8
    assert all(l.startswith("PASS") for l in lines)


def test_emulate_check_reports_deviation(capsys):
    code, out, _ = run_cli(["emulate-check", "--n", "4", "--steps", "64"], capsys)
    assert code == 0
    assert "deviation" in out


def test_train_writes_metrics_csv(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "eta = 0.05\nepochs = 1\nbatch_size = 16\nnormalizer = batch\n"
        "hidden = 8\nsamples = 200\ndim = 4\nclasses = 3\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    code, stdout, _ = run_cli(["train", "--config", str(cfg), "--out", str(out)], capsys)
    assert code == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "epoch", "loss", "accuracy", "weight_norm_l2", "eps_y_max", "eps_1_max"]
    assert len(rows) >= 2
    for cell in rows[1]:
        float(cell)


def test_bad_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpha_f = 1.5\n", encoding="utf-8")
    code, _, err = run_cli(["train", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert "line 1" in err


def test_missing_config_file_exits_two(tmp_path, capsys):
    code, _, _ = run_cli(
        ["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")], capsys
    )
    assert code == 2


def test_divergent_training_exits_three(tmp_path, capsys):
    cfg = tmp_path / "div.cfg"
    cfg.write_text(
        "eta = 100000.0\nmomentum = 0.0\nl2 = 0.0\nepochs = 3\nbatch_size = 8\n"
        "normalizer = none\nhidden = 8\nsamples = 200\ndim = 4\ndivergence_limit = 1000.0\n",
        encoding="utf-8",
    )
    with np.errstate(all="ignore"):
        code, _, err = run_cli(["train", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 3
    assert "diverged" in err


def test_growth_subcommand_writes_csv(tmp_path, capsys):
    out = tmp_path / "g"
    code, stdout, _ = run_cli(
        ["growth", "--depth", "8", "--sigma-down", "0.05", "--out", str(out)], capsys
    )
    assert code == 0
    assert (out / "growth.csv").exists()
    assert "slope" in stdout


def test_equilibrium_subcommand_writes_csv(tmp_path, capsys):
    out = tmp_path / "e"
    code, stdout, _ = run_cli(["equilibrium", "--steps", "500", "--out", str(out)], capsys)
    assert code == 0
    assert (out / "equilibrium.csv").exists()
    assert "ratio" in stdout


def test_grad_bias_subcommand_writes_csv(tmp_path, capsys):
    out = tmp_path / "b"
    code, stdout, _ = run_cli(
        ["grad-bias", "--samples", "32", "--batch-sizes", "4", "--reps", "1", "--out", str(out)],
        capsys,
    )
    assert code == 0
    assert (out / "grad_bias.csv").exists()


def test_sweep_subcommand_writes_csv(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(
        "eta = 0.003\nepochs = 1\nbatch_size = 1\nnormalizer = online\nhidden = 8\n"
        "samples = 120\ndim = 4\n",
        encoding="utf-8",
    )
    out = tmp_path / "s"
    code, _, _ = run_cli(
        ["sweep", "--config", str(cfg), "--alpha-f-grid", "0.99,0.999",
         "--alpha-b-grid", "0.99", "--out", str(out)],
        capsys,
    )
    assert code == 0
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["alpha_f", "alpha_b", "final_loss", "diverged"]
    assert len(rows) == 3


def test_seed_override_changes_run(tmp_path, capsys):
    out_a, out_b, out_c = (tmp_path / n for n in "abc")
    for out, seed in ((out_a, "1"), (out_b, "1"), (out_c, "2")):
        code, _, _ = run_cli(
            ["equilibrium", "--steps", "300", "--seed", seed, "--out", str(out)], capsys
        )
        assert code == 0
    a = (out_a / "equilibrium.csv").read_text()
    assert a == (out_b / "equilibrium.csv").read_text()
    assert a != (out_c / "equilibrium.csv").read_text()


def test_cli_only_writes_inside_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = set(os.listdir(tmp_path))
    code, _, _ = run_cli(["growth", "--depth", "4", "--out", str(tmp_path / "only")], capsys)
    assert code == 0
    after = set(os.listdir(tmp_path))
    assert after - before == {"only"}
