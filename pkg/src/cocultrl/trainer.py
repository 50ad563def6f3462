"""REINFORCE with a standardized-return baseline."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import BatchDegenerate
from .policy import Architecture, PolicyParams, weighted_log_prob_grad
from .returns import ReturnConfig, preset
from .rollout import RolloutConfig, run_batch

log = logging.getLogger(__name__)

PLAIN = "plain"
ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 350
    n_mc: int = 500
    learning_rate: float = 1e-3
    baseline_epsilon: float = 1e-8
    optimizer: str = PLAIN
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    master_seed: int = 0
    return_cfg: ReturnConfig = field(default_factory=lambda: preset("case3"))

    def __post_init__(self):
        if self.learning_rate <= 0 or self.baseline_epsilon <= 0:
            raise ValueError("learning_rate and baseline_epsilon must be > 0")
        if self.n_epochs < 1 or self.n_mc < 2:
            raise ValueError("need n_epochs >= 1 and n_mc >= 2")
        if self.optimizer not in (PLAIN, ADAM):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    mean_J: float
    std_J: float
    min_J: float
    max_J: float
    grad_norm: float
    seconds: float

    # wall time is kept out of the stats file so reruns are byte-identical
    CSV_FIELDS = ("epoch", "mean_J", "std_J", "min_J", "max_J", "grad_norm")

    def row(self):
        return [self.epoch, repr(self.mean_J), repr(self.std_J), repr(self.min_J),
                repr(self.max_J), repr(self.grad_norm)]


def normalize_returns(returns, eps=1e-8) -> np.ndarray:
    """``(J - mean) / (std + eps)`` with the population standard deviation."""
    J = np.asarray(returns, dtype=float)
    if J.size < 2:
        raise ValueError("need at least two returns")
    return (J - J.mean()) / (J.std() + eps)


def estimate_gradient(batch, advantages, params: PolicyParams) -> np.ndarray:
    """Monte Carlo policy gradient ``1/N sum_k A_k sum_t grad log pi(u_t^k | s_t^k)``.

    All (episode, step) pairs go through one backward pass, stacked in episode
    order, so the reduction order is fixed.
    """
    adv = np.asarray(advantages, dtype=float)
    if len(adv) != len(batch.episodes):
        raise ValueError("advantages and episodes are not aligned")
    n = len(adv)
    obs = np.concatenate([e.observations for e in batch.episodes])
    raw = np.concatenate([e.raw_actions for e in batch.episodes])
    t_f = batch.episodes[0].t_f
    weights = np.repeat(adv / n, t_f)
    return weighted_log_prob_grad(obs, raw, weights, params)


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def update(params: PolicyParams, grad, cfg: TrainConfig, state: OptimizerState | None = None):
    """One gradient-ascent step. Returns ``(new_params, new_state)``."""
    state = state or OptimizerState()
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.flat.shape:
        raise ValueError("gradient shape does not match parameters")
    if cfg.optimizer == PLAIN:
        return params.with_flat(params.flat + cfg.learning_rate * grad), OptimizerState(state.step + 1)
    b1, b2 = cfg.adam_betas
    m = np.zeros_like(grad) if state.m is None else state.m
    v = np.zeros_like(grad) if state.v is None else state.v
    t = state.step + 1
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    flat = params.flat + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return params.with_flat(flat), OptimizerState(t, m, v)


def epoch_seed(master_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), 0x5EED, int(epoch)]).generate_state(1, np.uint64)[0])


def init_seed(master_seed: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), 0x1417]).generate_state(1, np.uint64)[0])


@dataclass
class TrainResult:
    best_params: PolicyParams
    final_params: PolicyParams
    best_epoch: int
    stats: list


def train(cfg: TrainConfig, model: dyn.ModelParams, rollout_cfg: RolloutConfig,
          arch: Architecture | None = None, init_params: PolicyParams | None = None,
          init_kwargs=None, callback=None) -> TrainResult:
    """Run ``cfg.n_epochs`` policy-gradient updates.

    The "best" policy is the parameter vector that produced the batch with the
    highest mean return (earliest epoch on ties). Raises BatchDegenerate if a
    batch has too many failed episodes.
    """
    arch = arch or Architecture()
    if init_params is None:
        rng = np.random.default_rng(init_seed(cfg.master_seed))
        init_params = PolicyParams.initialize(arch, rng, rollout_cfg.u_max, **(init_kwargs or {}))
    params = init_params
    opt = OptimizerState()
    stats = []
    best_mean, best_params, best_epoch = -np.inf, params, 0
    for m in range(cfg.n_epochs):
        t0 = time.perf_counter()
        try:
            batch = run_batch(params, model, rollout_cfg, epoch_seed(cfg.master_seed, m), cfg.n_mc,
                              return_cfg=cfg.return_cfg)
        except BatchDegenerate as exc:
            raise BatchDegenerate(f"epoch {m}: {exc}") from exc
        J = batch.returns
        adv = normalize_returns(J, cfg.baseline_epsilon)
        g = estimate_gradient(batch, adv, params)
        if J.mean() > best_mean:
            best_mean, best_params, best_epoch = float(J.mean()), params, m
        params, opt = update(params, g, cfg, opt)
        s = EpochStats(m, float(J.mean()), float(J.std()), float(J.min()), float(J.max()),
                       float(np.linalg.norm(g)), time.perf_counter() - t0)
        stats.append(s)
        log.info("epoch %d mean J %.4f std %.4f |g| %.3g", m, s.mean_J, s.std_J, s.grad_norm)
        if callback is not None:
            callback(m, params, s)
    return TrainResult(best_params, params, best_epoch, stats)


def write_stats_csv(path, stats):
    """Per-epoch return statistics; deterministic given the run's seeds."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EpochStats.CSV_FIELDS)
        for s in stats:
            w.writerow(s.row())


def write_timing_csv(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "seconds"))
        for s in stats:
            w.writerow([s.epoch, f"{s.seconds:.3f}"])
