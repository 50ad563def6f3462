"""Episode return functions for two-setpoint biomass tracking.

``quadratic`` is the negated weighted squared tracking error summed over the
scored steps. ``saturation`` multiplies one inverse saturation factor
``beta_e / (beta_e + e)`` per species, so the stage reward is only large when
both errors are small at the same time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, LengthMismatch

QUADRATIC = "quadratic"
SATURATION = "saturation"

PRESET_BETA = {"case2": 3.0, "case3": 9.0, "case4": 27.0}


@dataclass(frozen=True)
class ReturnConfig:
    kind: str = SATURATION
    setpoints: tuple = (3.0, 3.0)
    # quadratic
    weights: tuple = (1.0, 1.0)
    # saturation
    beta_vmax: float | None = 1.0
    beta_e: tuple | None = (9.0, 9.0)
    stage_weights: tuple | float = 1.0
    terminal_weight: float = 2.0
    preset: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "setpoints", tuple(float(v) for v in self.setpoints))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        if self.beta_e is not None:
            object.__setattr__(self, "beta_e", tuple(float(v) for v in np.broadcast_to(self.beta_e, (2,))))
        if np.ndim(self.stage_weights):
            object.__setattr__(self, "stage_weights", tuple(float(v) for v in self.stage_weights))
        else:
            object.__setattr__(self, "stage_weights", float(self.stage_weights))
        self.validate()

    def validate(self):
        if self.kind not in (QUADRATIC, SATURATION):
            raise ConfigInvalid(f"unknown return kind {self.kind!r}", "return.kind")
        if len(self.setpoints) != 2 or min(self.setpoints) <= 0:
            raise ConfigInvalid("two positive setpoints required", "return.setpoints")
        if self.kind == QUADRATIC:
            if len(self.weights) != 2 or min(self.weights) < 0:
                raise ConfigInvalid("two nonnegative weights required", "return.weights")
            return
        if self.beta_vmax is None:
            raise ConfigInvalid("missing for saturation return", "return.beta_vmax")
        if self.beta_e is None:
            raise ConfigInvalid("missing for saturation return", "return.beta_e")
        if self.beta_vmax <= 0:
            raise ConfigInvalid("must be > 0", "return.beta_vmax")
        if min(self.beta_e) <= 0:
            raise ConfigInvalid("must be > 0", "return.beta_e")
        if np.min(self.stage_weights) < 0 or self.terminal_weight < 0:
            raise ConfigInvalid("weights must be >= 0", "return.stage_weights")

    def stage_weight_vector(self, t_f):
        """Weights for scored steps ``t = 1..t_f`` (terminal weight last)."""
        if isinstance(self.stage_weights, tuple):
            if len(self.stage_weights) != t_f - 1:
                raise LengthMismatch(f"{len(self.stage_weights)} stage weights for horizon {t_f}")
            w = np.array(self.stage_weights + (self.terminal_weight,))
        else:
            w = np.full(t_f, self.stage_weights)
            w[-1] = self.terminal_weight
        return w

    def to_dict(self):
        if self.kind == QUADRATIC:
            return {"kind": self.kind, "setpoints": list(self.setpoints), "weights": list(self.weights)}
        sw = list(self.stage_weights) if isinstance(self.stage_weights, tuple) else self.stage_weights
        return {"kind": self.kind, "setpoints": list(self.setpoints), "beta_vmax": self.beta_vmax,
                "beta_e": list(self.beta_e), "stage_weights": sw, "terminal_weight": self.terminal_weight}


def preset(name: str) -> ReturnConfig:
    """The four named designs: ``case1`` quadratic, ``case2..4`` saturation."""
    if name == "case1":
        return ReturnConfig(kind=QUADRATIC, weights=(1.0, 1.0), beta_vmax=None, beta_e=None, preset=name)
    if name in PRESET_BETA:
        b = PRESET_BETA[name]
        return ReturnConfig(kind=SATURATION, beta_vmax=1.0, beta_e=(b, b), stage_weights=1.0,
                            terminal_weight=2.0, preset=name)
    raise ConfigInvalid(f"unknown preset {name!r}", "return.preset")


def squared_error(b, b_star):
    return (np.asarray(b) - b_star) ** 2


def saturation_factor(e, beta_e):
    return beta_e / (beta_e + e)


def saturation_stage(e1, e2, cfg: ReturnConfig):
    bv = cfg.beta_vmax
    return bv * saturation_factor(e1, cfg.beta_e[0]) * saturation_factor(e2, cfg.beta_e[1])


def stage_values(biomass, cfg: ReturnConfig) -> np.ndarray:
    """Per-step contributions before stage weighting.

    ``biomass`` has shape ``(..., t_f, 2)``. For the quadratic design this is
    the (positive) weighted squared error, for saturation the stage reward.
    """
    biomass = np.asarray(biomass, dtype=float)
    e1 = squared_error(biomass[..., 0], cfg.setpoints[0])
    e2 = squared_error(biomass[..., 1], cfg.setpoints[1])
    if cfg.kind == QUADRATIC:
        return cfg.weights[0] * e1 + cfg.weights[1] * e2
    return saturation_stage(e1, e2, cfg)


def biomass_return(biomass, cfg: ReturnConfig, t_f: int | None = None):
    """Return of one or many biomass trajectories ``(..., t_f, 2)``.

    Row ``t-1`` must hold the biomass observed after the ``t``-th action, so
    the initial state is not scored.
    """
    biomass = np.asarray(biomass, dtype=float)
    n = biomass.shape[-2]
    if t_f is not None and n != t_f:
        raise LengthMismatch(f"expected {t_f} scored states, got {n}")
    v = stage_values(biomass, cfg)
    if cfg.kind == QUADRATIC:
        return -v.sum(axis=-1)
    return v @ cfg.stage_weight_vector(n)


def episode_return(traj, cfg: ReturnConfig, t_f: int | None = None) -> float:
    """Scalar return of a :class:`~cocultrl.rollout.Trajectory`."""
    states = np.asarray(traj.next_states)
    return float(biomass_return(states[:, 1:3], cfg, t_f if t_f is not None else traj.t_f))


def max_return(cfg: ReturnConfig, t_f: int) -> float:
    """Upper bound reached only under perfect tracking at every scored step."""
    if cfg.kind == QUADRATIC:
        return 0.0
    return float(cfg.beta_vmax * cfg.stage_weight_vector(t_f).sum())
