import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from cocultrl import dynamics as dyn
from cocultrl.cli import main
from cocultrl.config import (apply_overrides, dump_config, load_config, parse_config, preset_config,
                             read_config_dict)
from cocultrl.errors import ArchitectureMismatch, ConfigInvalid, ManifestMissing, OutputDirLocked
from cocultrl.experiment import (PROFILE_COLUMNS, cmd_compare, cmd_evaluate, cmd_train,
                                 final_window_tracking_error, interval_mean_growth_rate, output_lock)
from cocultrl.policy import Architecture, PolicyParams, save_checkpoint

from conftest import CONFIGS

TINY = ["train.n_epochs=2", "train.n_mc=4"]


def quiet(*_):
    pass


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    manifest = cmd_train(CONFIGS / "case3_desk.yaml", TINY, out=out, log=quiet)
    return out, manifest


# -- config ---------------------------------------------------------------------

@pytest.mark.parametrize("name", [f"case{i}" for i in range(1, 5)] + [f"case{i}_desk" for i in range(1, 5)])
def test_shipped_configs_round_trip(name):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again == cfg


@pytest.mark.parametrize("name", ["case1", "case2", "case3", "case4"])
def test_full_scale_configs_match_preset(name):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    ref = preset_config(name)
    assert cfg.model == dyn.ModelParams()
    assert cfg.return_cfg == ref.return_cfg
    assert cfg.train.n_epochs == 350 and cfg.train.n_mc == 500 and cfg.train.learning_rate == 0.001
    assert cfg.initial_state == dyn.DEFAULT_INITIAL_STATE and cfg.horizon == 18


@pytest.mark.parametrize("name, beta", [("case2", 3.0), ("case3", 9.0), ("case4", 27.0)])
def test_preset_fidelity(name, beta):
    r = preset_config(name).return_cfg
    assert r.beta_e == (beta, beta) and r.beta_vmax == 1.0
    assert r.stage_weights == 1.0 and r.terminal_weight == 2.0


def test_preset_model_table():
    m = dyn.ModelParams()
    assert m.mu_max == (0.982, 0.982) and m.k_s == (2.964e-4, 2.964e-4) and m.f_c == 1100.0
    assert m.k_a == (1.7, 0.182) and m.y_sb == (10.18, 10.18)
    assert m.q_a_max == (0.337, 0.036) and m.n == (2.0, 4.865) and m.k_I == (1.052, 1.34)
    assert m.d_l == 0.15 and m.s_in == 200.0


def test_missing_beta_e_names_field():
    d = read_config_dict(CONFIGS / "case3_desk.yaml")
    d["return"] = {"kind": "saturation", "beta_vmax": 1.0}
    with pytest.raises(ConfigInvalid) as exc:
        parse_config(d)
    assert exc.value.field == "return.beta_e"


def test_unknown_key_rejected():
    d = read_config_dict(CONFIGS / "case3_desk.yaml")
    d["train"]["n_epoch"] = 3
    with pytest.raises(ConfigInvalid, match="train.n_epoch"):
        parse_config(d)


def test_bad_value_names_section():
    d = read_config_dict(CONFIGS / "case3_desk.yaml")
    d["train"]["learning_rate"] = -1
    with pytest.raises(ConfigInvalid) as exc:
        parse_config(d)
    assert exc.value.field == "train"


def test_overrides():
    d = read_config_dict(CONFIGS / "case3.yaml")
    d2 = apply_overrides(d, ["train.n_epochs=3", "policy.u_max=[1, 2]", "return.beta_e=[4, 5]"])
    cfg = parse_config(d2)
    assert cfg.train.n_epochs == 3 and cfg.policy.u_max == (1.0, 2.0)
    assert cfg.return_cfg.beta_e == (4.0, 5.0) and cfg.return_cfg.terminal_weight == 2.0
    assert d["train"]["n_epochs"] == 350  # input untouched
    with pytest.raises(ConfigInvalid):
        apply_overrides(d, ["train.n_epochs"])


def test_manifest_is_a_config_source(tiny_run):
    out, manifest = tiny_run
    cfg = load_config(out / "manifest.json")
    assert cfg == parse_config(manifest["config"])
    assert cfg.train.n_epochs == 2


# -- metrics --------------------------------------------------------------------

def test_final_window_error():
    states = np.zeros((19, 5))
    states[:, 1] = 3.0
    states[-5:, 2] = [2.0, 4.0, 3.0, 3.5, 2.5]
    np.testing.assert_allclose(final_window_tracking_error(states, (3.0, 3.0)), [0.0, 0.6])


def test_interval_mean_growth_rate_against_fine_average(model, x0):
    # oracle: integrate at fine resolution and average mu over the last 3 h
    u = np.array([0.6, 1.5])
    states = dyn.simulate(x0, np.tile(u, (18, 1)), model)
    fine = [states[15]]
    x = states[15]
    h = 1.0 / 400
    for _ in range(3 * 400):
        x = dyn.rk4_interval(x, u, model, 1, duration=h)
        fine.append(x)
    mu = dyn.growth_rates(np.array(fine), model)
    trapz = ((mu[1:] + mu[:-1]) / 2).sum(axis=0) * h / 3
    np.testing.assert_allclose(interval_mean_growth_rate(states, model.d_l), trapz, atol=1e-5)


# -- train ------------------------------------------------------------------------

def test_train_writes_all_artifacts(tiny_run):
    out, manifest = tiny_run
    for rel in manifest["artifacts"].values():
        assert (out / rel).is_file()
    assert (out / "manifest.json").is_file() and not (out / ".lock").exists()
    assert manifest["seeds"]["master_seed"] == 0 and len(manifest["seeds"]["epoch_seeds"]) == 2
    assert manifest["software"]["version"]
    with open(out / "epoch_stats.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    best = max(range(2), key=lambda i: float(rows[i]["mean_J"]))
    assert manifest["best_epoch"] == best


def test_rerun_from_manifest_is_byte_identical(tiny_run, tmp_path):
    out, _ = tiny_run
    cmd_train(out / "manifest.json", out=tmp_path / "again", log=quiet)
    assert (out / "epoch_stats.csv").read_bytes() == (tmp_path / "again" / "epoch_stats.csv").read_bytes()
    assert (out / "best.json").read_bytes() == (tmp_path / "again" / "best.json").read_bytes()
    assert (out / "trajectories.csv").read_bytes() == (tmp_path / "again" / "trajectories.csv").read_bytes()


def test_output_lock(tmp_path):
    with output_lock(tmp_path):
        with pytest.raises(OutputDirLocked):
            with output_lock(tmp_path):
                pass
    with output_lock(tmp_path):
        pass


def test_locked_dir_refuses_training(tmp_path):
    (tmp_path / ".lock").write_text("123")
    with pytest.raises(OutputDirLocked):
        cmd_train(CONFIGS / "case3_desk.yaml", TINY, out=tmp_path, log=quiet)


# -- evaluate ---------------------------------------------------------------------

def test_evaluate_report_and_growth_profile(tiny_run, tmp_path, model):
    out, _ = tiny_run
    r = cmd_evaluate(out / "best.json", out / "manifest.json", n_episodes=3, seed=1, out=tmp_path)
    assert r["n_episodes"] == 3 and len(r["terminal_abs_error_mean"]) == 2
    for f in ("trajectories.csv", "profiles.csv", "evaluation.json"):
        assert (tmp_path / f).is_file()
    # recompute growth rates from the dumped trajectories
    with open(tmp_path / "trajectories.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    states = np.array([[float(row[k]) for k in ("s", "b1", "b2", "a1", "a2")] for row in rows]).reshape(3, 19, 5)
    mu = np.array([[dyn.growth_rates(x, model) for x in ep] for ep in states])
    np.testing.assert_allclose(r["profiles"]["mu_mean"], mu.mean(axis=0), rtol=1e-12)
    terminal = np.abs(states[:, -1, 1:3] - 3.0).mean(axis=0)
    np.testing.assert_allclose(r["terminal_abs_error_mean"], terminal, rtol=1e-12)
    with open(tmp_path / "profiles.csv", newline="") as fh:
        prof = list(csv.reader(fh))
    assert tuple(prof[0]) == PROFILE_COLUMNS and len(prof) == 20


def test_evaluate_single_deterministic_episode(tiny_run):
    out, _ = tiny_run
    a = cmd_evaluate(out / "best.json", out / "manifest.json", n_episodes=1, seed=1, deterministic=True)
    b = cmd_evaluate(out / "best.json", out / "manifest.json", n_episodes=1, seed=2, deterministic=True)
    assert a["terminal_abs_error_mean"] == b["terminal_abs_error_mean"]
    assert a["terminal_abs_error_std"] == [0.0, 0.0]


def test_evaluate_architecture_mismatch(tmp_path):
    p = PolicyParams.zeros(Architecture(hidden=(8, 8)))
    save_checkpoint(tmp_path / "small.json", p)
    with pytest.raises(ArchitectureMismatch):
        cmd_evaluate(tmp_path / "small.json", CONFIGS / "case3_desk.yaml", n_episodes=1)


# -- compare ----------------------------------------------------------------------

def test_compare_needs_two(tiny_run):
    out, _ = tiny_run
    with pytest.raises(ValueError):
        cmd_compare([out / "manifest.json"])


def test_compare_identical_manifests(tiny_run, tmp_path):
    out, manifest = tiny_run
    res = cmd_compare([out, out / "manifest.json"], out=tmp_path)
    a, b = res["labels"]
    assert a != b
    for row in res["table"]:
        for f in ("mean_J", "std_J", "grad_norm"):
            assert row[f"{a}:{f}"] == row[f"{b}:{f}"]
    assert (tmp_path / "comparison.csv").is_file()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary[a]["best_mean_J"] == manifest["best_mean_J"]
    assert "terminal_abs_error_mean" in summary[a]


def test_compare_missing_manifest(tiny_run, tmp_path):
    out, _ = tiny_run
    with pytest.raises(ManifestMissing):
        cmd_compare([out, tmp_path / "nope"])


# -- CLI ------------------------------------------------------------------------------

def test_cli_train_smoke(tmp_path, capsys):
    code = main(["train", "--config", str(CONFIGS / "case3_desk.yaml"), "--set", "train.n_epochs=1",
                 "--set", "train.n_mc=2", "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["best_epoch"] == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seeds"]["master_seed"] == 3
    for rel in manifest["artifacts"].values():
        assert (tmp_path / rel).is_file()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("return: {kind: saturation, beta_vmax: 1.0}\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "beta_e" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_cli_runtime_abort_exit_code(tmp_path):
    (tmp_path / ".lock").write_text("1")
    assert main(["train", "--config", str(CONFIGS / "case3_desk.yaml"), *sum((["--set", o] for o in TINY), []),
                 "--out", str(tmp_path)]) == 3


def test_cli_compare_and_evaluate(tiny_run, tmp_path):
    out, _ = tiny_run
    assert main(["compare", str(out), str(out), "--out", str(tmp_path / "cmp")]) == 0
    assert main(["compare", str(out), "--out", str(tmp_path / "cmp")]) == 2
    assert main(["compare", str(out), str(tmp_path / "none"), "--out", str(tmp_path / "cmp")]) == 2
    assert main(["evaluate", "--checkpoint", str(out / "best.json"), "--config", str(out / "manifest.json"),
                 "--episodes", "2", "--out", str(tmp_path / "ev")]) == 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cocultrl.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "train" in r.stdout
