"""Observation building and seeded Monte Carlo rollouts.

Episodes are simulated in fixed-size chunks; each chunk is integrated as one
vectorized batch while every episode keeps its own random generator. Chunk
boundaries depend only on the episode index, so running chunks serially or on
a thread pool produces the same numbers.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import BatchDegenerate, NonFiniteState
from .policy import PolicyParams, _forward, gaussian_log_prob
from .returns import ReturnConfig, biomass_return

log = logging.getLogger(__name__)

OBS_DIM = 2 * dyn.N_STATES + 2 * dyn.N_INPUTS + 1
MAX_FAILED_FRACTION = 0.10


@dataclass(frozen=True)
class RolloutConfig:
    t_f: int = 18
    initial_state: tuple = tuple(dyn.DEFAULT_INITIAL_STATE.to_array().tolist())
    u_max: tuple = (10.0, 10.0)
    integrator: dyn.IntegratorConfig = field(default_factory=dyn.IntegratorConfig)
    # optional affine observation scaling: (x - state_offset) / state_scale, u / input_scale
    state_offset: tuple | None = None
    state_scale: tuple | None = None
    input_scale: tuple | None = None
    chunk_size: int = 64
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))
        object.__setattr__(self, "u_max", tuple(float(v) for v in np.broadcast_to(self.u_max, (2,))))
        if self.t_f < 2:
            raise ValueError("t_f must be >= 2")
        if min(self.u_max) <= 0:
            raise ValueError("u_max must be > 0")
        if min(self.initial_state) < 0 or len(self.initial_state) != dyn.N_STATES:
            raise ValueError("initial_state needs 5 nonnegative values")
        for name, n in (("state_offset", 5), ("state_scale", 5), ("input_scale", 2)):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in np.broadcast_to(v, (n,)))
                if name != "state_offset" and min(v) <= 0:
                    raise ValueError(f"{name} must be > 0")
                object.__setattr__(self, name, v)
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be >= 1")

    @property
    def x0(self):
        return np.array(self.initial_state)


def _scale_states(x, cfg: RolloutConfig | None):
    if cfg is None:
        return x
    if cfg.state_offset is not None:
        x = x - np.asarray(cfg.state_offset)
    if cfg.state_scale is not None:
        x = x / np.asarray(cfg.state_scale)
    return x


def _scale_inputs(u, cfg: RolloutConfig | None):
    if cfg is None or cfg.input_scale is None:
        return u
    return u / np.asarray(cfg.input_scale)


def time_embedding(t, t_f):
    """Linear map of decision index ``0..t_f-1`` onto ``[-1, 1]``."""
    return -1.0 + 2.0 * t / (t_f - 1)


def build_observation(states, actions, t, t_f, cfg: RolloutConfig | None = None) -> np.ndarray:
    """Agent observation ``[x_{t-1}, u_{t-2}, x_t, u_{t-1}, t*]`` at decision ``t``.

    ``states`` holds ``x_0..x_t`` (at least) and ``actions`` the applied inputs
    ``u_0..u_{t-1}``. Before the history exists, the initial state is repeated
    and missing inputs are zero.
    """
    if not 0 <= t < t_f:
        raise IndexError(f"decision index {t} outside 0..{t_f - 1}")
    states = np.asarray(states, dtype=float)
    zero = np.zeros(dyn.N_INPUTS)
    x_t = states[t]
    x_prev = states[max(t - 1, 0)]
    u_prev = np.asarray(actions[t - 1], dtype=float) if t >= 1 else zero
    u_prev2 = np.asarray(actions[t - 2], dtype=float) if t >= 2 else zero
    return np.concatenate([_scale_states(x_prev, cfg), _scale_inputs(u_prev2, cfg),
                           _scale_states(x_t, cfg), _scale_inputs(u_prev, cfg),
                           [time_embedding(t, t_f)]])


def _batch_observation(x_prev, u_prev2, x_t, u_prev, t, t_f, cfg):
    n = x_t.shape[0]
    return np.concatenate([_scale_states(x_prev, cfg), _scale_inputs(u_prev2, cfg),
                           _scale_states(x_t, cfg), _scale_inputs(u_prev, cfg),
                           np.full((n, 1), time_embedding(t, t_f))], axis=1)


@dataclass
class Trajectory:
    initial_state: np.ndarray
    observations: np.ndarray  # (t_f, 15)
    raw_actions: np.ndarray  # (t_f, 2)
    applied_actions: np.ndarray  # (t_f, 2)
    log_probs: np.ndarray  # (t_f,)
    next_states: np.ndarray  # (t_f, 5); row t is x_{t+1}
    seed: int | None = None

    @property
    def t_f(self):
        return len(self.next_states)

    @property
    def states(self):
        """All states ``x_0..x_{t_f}``."""
        return np.vstack([self.initial_state, self.next_states])


@dataclass
class EpisodeBatch:
    episodes: list
    returns: np.ndarray | None
    seeds: list
    failed_seeds: list = field(default_factory=list)

    def __len__(self):
        return len(self.episodes)


def episode_seed(epoch_seed: int, index: int) -> int:
    """Seed of episode ``index``: first 64-bit word of ``SeedSequence([epoch_seed, index])``."""
    return int(np.random.SeedSequence([int(epoch_seed), int(index)]).generate_state(1, np.uint64)[0])


def simulate_episodes(params: PolicyParams, model: dyn.ModelParams, cfg: RolloutConfig, seeds,
                      deterministic=False):
    """Roll out one episode per seed as a single vectorized batch.

    Returns ``(trajectories, failed)`` where ``failed`` flags episodes whose
    state became non-finite. With ``deterministic=True`` the policy mean is
    applied and no noise is drawn for actions.
    """
    n = len(seeds)
    t_f = cfg.t_f
    rngs = [np.random.default_rng(s) for s in seeds]
    u_max = np.asarray(cfg.u_max)
    noise_std = None if cfg.integrator.noise_std is None else np.asarray(cfg.integrator.noise_std)

    x = np.tile(cfg.x0, (n, 1))
    states = np.empty((t_f + 1, n, dyn.N_STATES))
    states[0] = x
    obs = np.empty((t_f, n, OBS_DIM))
    raw = np.empty((t_f, n, dyn.N_INPUTS))
    applied = np.zeros((t_f, n, dyn.N_INPUTS))
    logp = np.empty((t_f, n))
    failed = np.zeros(n, dtype=bool)
    zero_u = np.zeros((n, dyn.N_INPUTS))

    for t in range(t_f):
        u1 = applied[t - 1] if t >= 1 else zero_u
        u2 = applied[t - 2] if t >= 2 else zero_u
        obs[t] = _batch_observation(states[max(t - 1, 0)], u2, states[t], u1, t, t_f, cfg)
        mean, std, _ = _forward(obs[t], params)
        if deterministic:
            raw[t] = mean
        else:
            eps = np.stack([g.standard_normal(dyn.N_INPUTS) for g in rngs])
            raw[t] = mean + std * eps
        logp[t] = gaussian_log_prob(raw[t], mean, std)
        applied[t] = np.clip(raw[t], 0.0, u_max)
        with np.errstate(all="ignore"):
            x_next = dyn.rk4_interval(states[t], applied[t], model, cfg.integrator.substeps_per_hour,
                                      stiff_limit=cfg.integrator.stiff_limit)
        if noise_std is not None:
            d = np.stack([g.normal(size=dyn.N_STATES) for g in rngs]) * noise_std
            x_next = np.maximum(x_next + d, 0.0)
        bad = ~np.all(np.isfinite(x_next), axis=1)
        if bad.any():
            failed |= bad
            x_next[bad] = 0.0
        states[t + 1] = x_next

    trajs = [Trajectory(initial_state=states[0, k].copy(), observations=obs[:, k].copy(),
                        raw_actions=raw[:, k].copy(), applied_actions=applied[:, k].copy(),
                        log_probs=logp[:, k].copy(), next_states=states[1:, k].copy(), seed=seeds[k])
             for k in range(n)]
    return trajs, failed


def run_episode(params: PolicyParams, model: dyn.ModelParams, cfg: RolloutConfig, seed: int,
                deterministic=False) -> Trajectory:
    """Simulate one seeded episode. Raises NonFiniteState if the plant blows up."""
    (traj,), failed = simulate_episodes(params, model, cfg, [seed], deterministic)
    if failed[0]:
        raise NonFiniteState(f"episode with seed {seed} produced a non-finite state")
    return traj


def run_batch(params: PolicyParams, model: dyn.ModelParams, cfg: RolloutConfig, epoch_seed: int,
              n_mc: int, return_cfg: ReturnConfig | None = None, workers: int | None = None) -> EpisodeBatch:
    """Run ``n_mc`` episodes with seeds split from ``epoch_seed``.

    Episodes are grouped into chunks of ``cfg.chunk_size`` by index and the
    chunks run on ``workers`` threads; output is in episode order either way.
    Failed episodes are dropped and their seeds logged; more than 10% failures
    raises BatchDegenerate.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    seeds = [episode_seed(epoch_seed, k) for k in range(n_mc)]
    chunks = [seeds[i:i + cfg.chunk_size] for i in range(0, n_mc, cfg.chunk_size)]
    workers = cfg.workers if workers is None else workers

    def job(chunk):
        return simulate_episodes(params, model, cfg, chunk)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(c) for c in chunks]

    episodes, ok_seeds, failed_seeds = [], [], []
    for trajs, failed in results:
        for traj, bad in zip(trajs, failed):
            if bad:
                failed_seeds.append(traj.seed)
            else:
                episodes.append(traj)
                ok_seeds.append(traj.seed)
    if failed_seeds:
        log.warning("dropped %d non-finite episodes, seeds %s", len(failed_seeds), failed_seeds)
    if len(failed_seeds) > MAX_FAILED_FRACTION * n_mc:
        raise BatchDegenerate(f"{len(failed_seeds)} of {n_mc} episodes failed")
    returns = None
    if return_cfg is not None:
        returns = batch_returns(episodes, return_cfg, cfg.t_f)
    return EpisodeBatch(episodes, returns, ok_seeds, failed_seeds)


def batch_returns(episodes, return_cfg: ReturnConfig, t_f: int) -> np.ndarray:
    if not episodes:
        return np.zeros(0)
    biomass = np.stack([e.next_states[:, dyn.B1:dyn.B2 + 1] for e in episodes])
    return np.asarray(biomass_return(biomass, return_cfg, t_f), dtype=float)


TRAJECTORY_COLUMNS = ("episode", "t", "s", "b1", "b2", "a1", "a2",
                      "I1_raw", "I2_raw", "I1_applied", "I2_applied", "log_prob")


def write_trajectories_csv(path, episodes):
    """One row per decision step; the state columns hold ``x_t`` before the action."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k, ep in enumerate(episodes):
            xs = ep.states
            for t in range(ep.t_f):
                w.writerow([k, t, *map(repr, xs[t].tolist()), *map(repr, ep.raw_actions[t].tolist()),
                            *map(repr, ep.applied_actions[t].tolist()), repr(float(ep.log_probs[t]))])
            # final state row: no action taken
            w.writerow([k, ep.t_f, *map(repr, xs[ep.t_f].tolist()), "", "", "", "", ""])
