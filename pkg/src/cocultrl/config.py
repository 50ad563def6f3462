"""Experiment configuration: YAML files, presets and dotted overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import dynamics as dyn
from .errors import ConfigInvalid
from .policy import Architecture
from .returns import QUADRATIC, ReturnConfig, preset
from .rollout import RolloutConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class PolicyConfig:
    hidden: tuple = (20, 20, 20, 20)
    negative_slope: float = 0.01
    std_floor: float = 1e-3
    u_max: tuple = (10.0, 10.0)
    head_scale: float = 1e-2
    mean_bias_fraction: float = 0.25
    std_bias: float = 0.0

    def architecture(self, obs_dim=15, act_dim=2):
        return Architecture(obs_dim=obs_dim, hidden=tuple(self.hidden), act_dim=act_dim,
                            negative_slope=self.negative_slope, std_floor=self.std_floor)

    def init_kwargs(self):
        return {"head_scale": self.head_scale, "mean_bias_fraction": self.mean_bias_fraction,
                "std_bias": self.std_bias}


@dataclass(frozen=True)
class ObservationConfig:
    state_offset: tuple | None = None
    state_scale: tuple | None = None
    input_scale: tuple | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    model: dyn.ModelParams = field(default_factory=dyn.ModelParams)
    initial_state: dyn.SystemState = dyn.DEFAULT_INITIAL_STATE
    horizon: int = 18
    integrator: dyn.IntegratorConfig = field(default_factory=dyn.IntegratorConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    chunk_size: int = 64
    workers: int = 1
    output_dir: str = "runs/experiment"

    @property
    def return_cfg(self) -> ReturnConfig:
        return self.train.return_cfg

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(t_f=self.horizon, initial_state=tuple(self.initial_state.to_array().tolist()),
                             u_max=self.policy.u_max, integrator=self.integrator,
                             state_offset=self.observation.state_offset,
                             state_scale=self.observation.state_scale,
                             input_scale=self.observation.input_scale,
                             chunk_size=self.chunk_size, workers=self.workers)

    def architecture(self) -> Architecture:
        return self.policy.architecture()

    def to_dict(self) -> dict:
        t = self.train
        ret = self.return_cfg.to_dict()
        if self.return_cfg.preset:
            ret = {"preset": self.return_cfg.preset, **ret}
        return {
            "name": self.name,
            "output_dir": self.output_dir,
            "horizon": self.horizon,
            "initial_state": {k: getattr(self.initial_state, k) for k in dyn.STATE_NAMES},
            "model": self.model.to_dict(),
            "integrator": {"substeps_per_hour": self.integrator.substeps_per_hour,
                           "noise_std": None if self.integrator.noise_std is None
                           else list(self.integrator.noise_std),
                           "stiff_limit": self.integrator.stiff_limit},
            "policy": _plain(self.policy),
            "observation": _plain(self.observation),
            "rollout": {"chunk_size": self.chunk_size, "workers": self.workers},
            "train": {"n_epochs": t.n_epochs, "n_mc": t.n_mc, "learning_rate": t.learning_rate,
                      "baseline_epsilon": t.baseline_epsilon, "optimizer": t.optimizer,
                      "adam_betas": list(t.adam_betas), "adam_eps": t.adam_eps,
                      "master_seed": t.master_seed},
            "return": ret,
        }


def _plain(dc):
    out = {}
    for f in fields(dc):
        v = getattr(dc, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _section(d, key, cls, prefix=None):
    sub = d.get(key) or {}
    if not isinstance(sub, dict):
        raise ConfigInvalid("expected a mapping", prefix or key)
    known = {f.name for f in fields(cls)}
    for k in sub:
        if k not in known:
            raise ConfigInvalid("unknown key", f"{prefix or key}.{k}")
    return sub


def _tuple_or_none(v):
    return None if v is None else tuple(np.atleast_1d(np.asarray(v, dtype=float)).tolist())


def parse_return(spec) -> ReturnConfig:
    """A preset name, or a mapping with optional ``preset`` plus explicit fields."""
    if isinstance(spec, str):
        return preset(spec)
    if not isinstance(spec, dict):
        raise ConfigInvalid("expected a preset name or a mapping", "return")
    spec = dict(spec)
    name = spec.pop("preset", None)
    known = {f.name for f in fields(ReturnConfig)} - {"preset"}
    for k in spec:
        if k not in known:
            raise ConfigInvalid("unknown key", f"return.{k}")
    if name is not None:
        base = preset(name)
        try:
            return replace(base, **spec)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigInvalid):
                raise
            raise ConfigInvalid(str(exc), "return") from exc
    if "kind" not in spec:
        raise ConfigInvalid("missing", "return.kind")
    if spec["kind"] == QUADRATIC:
        spec.setdefault("beta_vmax", None)
        spec.setdefault("beta_e", None)
    else:
        for req in ("beta_vmax", "beta_e"):
            if spec.get(req) is None:
                raise ConfigInvalid("missing for saturation return", f"return.{req}")
    try:
        return ReturnConfig(**spec)
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc), "return") from exc


def parse_config(d: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a nested mapping.

    Raises ConfigInvalid naming the offending key.
    """
    if not isinstance(d, dict):
        raise ConfigInvalid("top level must be a mapping")
    top = {"name", "output_dir", "horizon", "initial_state", "model", "integrator", "policy",
           "observation", "rollout", "train", "return"}
    for k in d:
        if k not in top:
            raise ConfigInvalid("unknown key", k)

    def guard(section, fn):
        try:
            return fn()
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc), section) from exc

    model = guard("model", lambda: dyn.ModelParams.from_dict(d.get("model") or {}))
    init = d.get("initial_state")
    if init is None:
        x0 = dyn.DEFAULT_INITIAL_STATE
    else:
        _section(d, "initial_state", dyn.SystemState)
        missing = [k for k in dyn.STATE_NAMES if k not in init]
        if missing:
            raise ConfigInvalid("missing", f"initial_state.{missing[0]}")
        x0 = guard("initial_state", lambda: dyn.SystemState(**{k: float(init[k]) for k in dyn.STATE_NAMES}))
        if min(x0.to_array()) < 0:
            raise ConfigInvalid("states must be >= 0", "initial_state")
    integ = _section(d, "integrator", dyn.IntegratorConfig)
    integrator = guard("integrator", lambda: dyn.IntegratorConfig(
        substeps_per_hour=integ.get("substeps_per_hour", 20), noise_std=_tuple_or_none(integ.get("noise_std")),
        stiff_limit=integ.get("stiff_limit", dyn.DEFAULT_STIFF_LIMIT)))
    pol = _section(d, "policy", PolicyConfig)
    policy = guard("policy", lambda: PolicyConfig(**{
        **pol, **{k: tuple(np.atleast_1d(pol[k]).tolist()) for k in ("hidden", "u_max") if k in pol}}))
    guard("policy", policy.architecture)
    obs = _section(d, "observation", ObservationConfig)
    observation = ObservationConfig(**{k: _tuple_or_none(v) for k, v in obs.items()})
    ro = d.get("rollout") or {}
    for k in ro:
        if k not in ("chunk_size", "workers"):
            raise ConfigInvalid("unknown key", f"rollout.{k}")
    if "return" not in d:
        raise ConfigInvalid("missing", "return")
    ret = parse_return(d["return"])
    tr = _section(d, "train", TrainConfig)
    if "return_cfg" in tr:
        raise ConfigInvalid("set the return under the top-level 'return' key", "train.return_cfg")
    train = guard("train", lambda: TrainConfig(return_cfg=ret, **{
        **tr, **({"adam_betas": tuple(tr["adam_betas"])} if "adam_betas" in tr else {})}))
    horizon = d.get("horizon", 18)
    if not isinstance(horizon, int) or horizon < 2:
        raise ConfigInvalid("must be an integer >= 2", "horizon")
    cfg = ExperimentConfig(name=str(d.get("name", "experiment")), model=model, initial_state=x0,
                           horizon=horizon, integrator=integrator, policy=policy, observation=observation,
                           train=train, chunk_size=int(ro.get("chunk_size", 64)),
                           workers=int(ro.get("workers", 1)),
                           output_dir=str(d.get("output_dir", "runs/experiment")))
    guard("observation", cfg.rollout_config)
    if cfg.return_cfg.kind != QUADRATIC:
        guard("return.stage_weights", lambda: cfg.return_cfg.stage_weight_vector(horizon))
    return cfg


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as YAML scalars/lists."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            nxt = node.get(p)
            if isinstance(nxt, str) and p == "return":
                nxt = {"preset": nxt}
            if nxt is None:
                nxt = {}
            if not isinstance(nxt, dict):
                raise ConfigInvalid("cannot override inside a scalar", key)
            node[p] = nxt
            node = nxt
        node[parts[-1]] = value
    return d


def read_config_dict(path) -> dict:
    """Load a YAML config, or the config snapshot stored in a run manifest."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return doc["config"] if "config" in doc else doc
    doc = yaml.safe_load(text)
    return doc or {}


def load_config(path, overrides=()) -> ExperimentConfig:
    return parse_config(apply_overrides(read_config_dict(path), overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def preset_config(name: str, **train_kwargs) -> ExperimentConfig:
    """Full-scale protocol for one of the four return designs."""
    return ExperimentConfig(name=name, train=TrainConfig(return_cfg=preset(name), **train_kwargs),
                            output_dir=f"runs/{name}")
