"""Training, evaluation and comparison runs that write their artifacts to disk."""
from __future__ import annotations

import csv
import json
import os
import platform
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from .config import ExperimentConfig, apply_overrides, dump_config, parse_config, read_config_dict
from .errors import ManifestMissing, OutputDirLocked
from .policy import load_checkpoint, save_checkpoint
from .rollout import episode_seed, simulate_episodes, write_trajectories_csv
from .trainer import epoch_seed, init_seed, train, write_stats_csv, write_timing_csv

MANIFEST = "manifest.json"


@contextmanager
def output_lock(out_dir: Path):
    """Exclusive lock file so two runs never share an output directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLocked(f"{out_dir} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- metrics ------------------------------------------------------------------

def final_window_tracking_error(states, setpoints, hours=5):
    """Mean ``|b_i(t) - b_i*|`` over the hourly states of the last ``hours`` hours.

    ``states`` is ``(..., t_f + 1, 5)``; returns ``(..., 2)``.
    """
    b = np.asarray(states)[..., -hours:, dyn.B1:dyn.B2 + 1]
    return np.abs(b - np.asarray(setpoints)).mean(axis=-2)


def interval_mean_growth_rate(states, d_l, hours=3):
    """Time-averaged growth rate of each strain over the last ``hours`` hours.

    Uses ``db/dt = (mu - d_l) b``, so the average equals
    ``d_l + ln(b_end / b_start) / hours`` exactly.
    """
    b = np.asarray(states)[..., dyn.B1:dyn.B2 + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return d_l + np.log(b[..., -1, :] / b[..., -1 - hours, :]) / hours


def worst_species(err):
    return float(np.max(err))


# -- evaluation ----------------------------------------------------------------

def evaluate_policy(params, cfg: ExperimentConfig, n_episodes=1, seed=0, deterministic=False):
    """Roll out a frozen policy and summarise the trajectories.

    Returns ``(episodes, report)``; ``report["profiles"]`` holds per-time mean
    and std of states, inputs and growth rates across episodes.
    """
    rc = cfg.rollout_config()
    seeds = [episode_seed(seed, k) for k in range(n_episodes)]
    episodes, failed = simulate_episodes(params, cfg.model, rc, seeds, deterministic=deterministic)
    episodes = [e for e, bad in zip(episodes, failed) if not bad]
    if not episodes:
        raise FloatingPointError("every evaluation episode produced a non-finite state")
    states = np.stack([e.states for e in episodes])
    inputs = np.stack([e.applied_actions for e in episodes])
    mu = dyn.growth_rates(states, cfg.model)
    sp = np.asarray(cfg.return_cfg.setpoints)
    terminal = np.abs(states[:, -1, dyn.B1:dyn.B2 + 1] - sp)
    window = final_window_tracking_error(states, sp, hours=min(5, cfg.horizon))
    mu_final = interval_mean_growth_rate(states, cfg.model.d_l, hours=min(3, cfg.horizon))
    report = {
        "n_episodes": len(episodes),
        "n_failed": int(failed.sum()),
        "deterministic": bool(deterministic),
        "seed": int(seed),
        "terminal_abs_error_mean": terminal.mean(axis=0).tolist(),
        "terminal_abs_error_std": terminal.std(axis=0).tolist(),
        "final5h_abs_error_mean": window.mean(axis=0).tolist(),
        "final3h_mean_growth_rate": np.nanmean(mu_final, axis=0).tolist(),
        "dilution_rate": cfg.model.d_l,
        "profiles": {
            "t": list(range(cfg.horizon + 1)),
            "state_mean": states.mean(axis=0).tolist(),
            "state_std": states.std(axis=0).tolist(),
            "mu_mean": mu.mean(axis=0).tolist(),
            "mu_std": mu.std(axis=0).tolist(),
            "input_mean": inputs.mean(axis=0).tolist(),
            "input_std": inputs.std(axis=0).tolist(),
        },
    }
    return episodes, report


PROFILE_COLUMNS = ("t", *(f"{n}_{s}" for n in dyn.STATE_NAMES for s in ("mean", "std")),
                   "mu1_mean", "mu1_std", "mu2_mean", "mu2_std", "d_l",
                   "I1_mean", "I1_std", "I2_mean", "I2_std")


def write_profiles_csv(path, report):
    """Plot-ready mean/std bands over time. Inputs at ``t = t_f`` are blank."""
    p = report["profiles"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        n_in = len(p["input_mean"])
        for i, t in enumerate(p["t"]):
            row = [t]
            for j in range(dyn.N_STATES):
                row += [p["state_mean"][i][j], p["state_std"][i][j]]
            for j in range(2):
                row += [p["mu_mean"][i][j], p["mu_std"][i][j]]
            row.append(report["dilution_rate"])
            for j in range(2):
                row += [p["input_mean"][i][j], p["input_std"][i][j]] if i < n_in else ["", ""]
            w.writerow(row)


# -- commands --------------------------------------------------------------

def _resolve(config, overrides, seed):
    """Config dict from a path, manifest, mapping or ExperimentConfig."""
    if isinstance(config, ExperimentConfig):
        d = config.to_dict()
    elif isinstance(config, dict):
        d = config
    else:
        d = read_config_dict(config)
    overrides = list(overrides or ())
    if seed is not None:
        overrides.append(f"train.master_seed={int(seed)}")
    return parse_config(apply_overrides(d, overrides))


def cmd_train(config, overrides=(), seed=None, out=None, log=print) -> dict:
    """Train a policy and write stats, checkpoints and a manifest.

    ``config`` may be a YAML path, a ``manifest.json`` from an earlier run, a
    mapping, or an ExperimentConfig. Returns the manifest dict.
    """
    cfg = _resolve(config, overrides, seed)
    out_dir = Path(out or cfg.output_dir)
    with output_lock(out_dir):
        started = _now()
        (out_dir / "config.yaml").write_text(dump_config(cfg))
        result = train(cfg.train, cfg.model, cfg.rollout_config(), arch=cfg.architecture(),
                       init_kwargs=cfg.policy.init_kwargs())
        write_stats_csv(out_dir / "epoch_stats.csv", result.stats)
        write_timing_csv(out_dir / "epoch_timing.csv", result.stats)
        best_mean = result.stats[result.best_epoch].mean_J
        save_checkpoint(out_dir / "best.json", result.best_params,
                        {"epoch": result.best_epoch, "mean_J": best_mean})
        save_checkpoint(out_dir / "final.json", result.final_params, {"epoch": cfg.train.n_epochs - 1})
        det_episodes, det = evaluate_policy(result.best_params, cfg, n_episodes=1, seed=0, deterministic=True)
        write_trajectories_csv(out_dir / "trajectories.csv", det_episodes)
        manifest = {
            "name": cfg.name,
            "config": cfg.to_dict(),
            "seeds": {
                "master_seed": cfg.train.master_seed,
                "init_seed": init_seed(cfg.train.master_seed),
                "epoch_seeds": [epoch_seed(cfg.train.master_seed, m) for m in range(cfg.train.n_epochs)],
            },
            "artifacts": {
                "config": "config.yaml",
                "epoch_stats": "epoch_stats.csv",
                "epoch_timing": "epoch_timing.csv",
                "best_checkpoint": "best.json",
                "final_checkpoint": "final.json",
                "trajectories": "trajectories.csv",
            },
            "best_epoch": result.best_epoch,
            "best_mean_J": best_mean,
            "deterministic_evaluation": {k: det[k] for k in (
                "terminal_abs_error_mean", "final5h_abs_error_mean", "final3h_mean_growth_rate")},
            "software": {"package": "cocultrl", "version": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "started": started,
            "finished": _now(),
        }
        (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2))
    log(f"best epoch {result.best_epoch}: mean return {best_mean:.6g}")
    return manifest


def cmd_evaluate(checkpoint, config, n_episodes=100, seed=0, out=None, deterministic=False,
                 overrides=()) -> dict:
    """Roll out a saved policy and write trajectories, profiles and a report."""
    cfg = _resolve(config, overrides, None)
    params = load_checkpoint(checkpoint, expected=cfg.architecture())
    episodes, report = evaluate_policy(params, cfg, n_episodes=n_episodes, seed=seed,
                                       deterministic=deterministic)
    report["checkpoint"] = str(checkpoint)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectories_csv(out / "trajectories.csv", episodes)
        write_profiles_csv(out / "profiles.csv", report)
        (out / "evaluation.json").write_text(json.dumps(report, indent=2))
    return report


def _read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise ManifestMissing(f"no run manifest at {path}")
    return path, json.loads(path.read_text())


def cmd_compare(manifests, out=None) -> dict:
    """Join epoch statistics of finished runs on the epoch index.

    Writes ``comparison.csv`` (one column group per run) and ``summary.json``.
    """
    if len(manifests) < 2:
        raise ValueError("compare needs at least two run manifests")
    runs, labels = [], []
    for i, m in enumerate(manifests):
        path, doc = _read_manifest(m)
        stats_path = path.parent / doc["artifacts"]["epoch_stats"]
        if not stats_path.is_file():
            raise ManifestMissing(f"{stats_path} listed in {path} does not exist")
        with open(stats_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        label = doc.get("name", f"run{i}")
        if label in labels:
            label = f"{label}#{i}"
        labels.append(label)
        runs.append((doc, rows))

    fields = ("mean_J", "std_J", "min_J", "max_J", "grad_norm")
    n_epochs = max(len(rows) for _, rows in runs)
    table = []
    for e in range(n_epochs):
        row = {"epoch": e}
        for label, (_, rows) in zip(labels, runs):
            for f in fields:
                row[f"{label}:{f}"] = rows[e][f] if e < len(rows) else ""
        table.append(row)
    summary = {label: {"best_mean_J": doc["best_mean_J"], "best_epoch": doc["best_epoch"],
                       **doc.get("deterministic_evaluation", {})}
               for label, (doc, _) in zip(labels, runs)}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]))
            w.writeheader()
            w.writerows(table)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return {"labels": labels, "table": table, "summary": summary}
