"""Chemostat co-culture of two auxotrophic E. coli strains under optogenetic control.

State vector layout (last axis, length 5)::

    [s, b1, b2, a1, a2]

``s`` is substrate (mmol/L), ``b_i`` biomass (g/L) and ``a_i`` the intracellular
auxotrophic amino acid (mmol/g). Inputs are ``[I1, I2]``: blue light in W/m2 for
strain 1 and red light in uW/cm2 for strain 2. Units are kept as-is, no
conversion is applied.

All array functions accept a leading batch shape so a whole Monte Carlo batch
can be integrated at once.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import NonFiniteState

S, B1, B2, A1, A2 = range(5)
N_STATES = 5
N_INPUTS = 2
STATE_NAMES = ("s", "b1", "b2", "a1", "a2")


@dataclass(frozen=True)
class SystemState:
    s: float
    b1: float
    b2: float
    a1: float
    a2: float

    def to_array(self) -> np.ndarray:
        return np.array([self.s, self.b1, self.b2, self.a1, self.a2], dtype=float)

    @classmethod
    def from_array(cls, x) -> "SystemState":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class LightInput:
    i1: float
    i2: float

    def to_array(self) -> np.ndarray:
        return np.array([self.i1, self.i2], dtype=float)


def _pair(v):
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class ModelParams:
    """Kinetic parameters. Per-species quantities are ``(strain1, strain2)`` pairs.

    ``d_a`` (intracellular amino-acid turnover) has no published value. The
    default of 1.0 1/h makes both strains wash out within 18 h once the lights
    are off; with ``d_a`` below about 0.7 1/h the amino-acid pool carried by the
    inoculum sustains growth long enough that they do not.
    """

    mu_max: tuple = (0.982, 0.982)
    k_s: tuple = (2.964e-4, 2.964e-4)
    f_c: float = 1100.0
    k_a: tuple = (1.7, 0.182)
    y_sb: tuple = (10.18, 10.18)
    q_a_max: tuple = (0.337, 0.036)
    n: tuple = (2.0, 4.865)
    k_I: tuple = (1.052, 1.34)
    d_a: tuple = (1.0, 1.0)
    d_l: float = 0.15
    s_in: float = 200.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple, np.ndarray)):
                v = _pair(v)
                if len(v) != 2:
                    raise ValueError(f"{f.name} needs one value per species")
                object.__setattr__(self, f.name, v)
        self.validate()

    def validate(self):
        for f in fields(self):
            vals = np.atleast_1d(getattr(self, f.name))
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{f.name} must be finite")
            if f.name == "d_a":
                if np.any(vals < 0):
                    raise ValueError("d_a must be >= 0")
            elif np.any(vals <= 0):
                raise ValueError(f"{f.name} must be > 0")
        if min(self.n) < 1:
            raise ValueError("Hill exponents n must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model parameters: {sorted(unknown)}")
        return cls(**d)

    def arrays(self):
        """Per-species parameters as float arrays (cached)."""
        cache = self.__dict__.get("_arrays")
        if cache is None:
            cache = {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}
            object.__setattr__(self, "_arrays", cache)
        return cache


DEFAULT_STIFF_LIMIT = 2.0


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    ``stiff_limit`` bounds ``h * |d(ds/dt)/ds|`` for an explicit substep; see
    :func:`rk4_interval`. ``None`` switches the safeguard off (plain RK4).
    """

    substeps_per_hour: int = 20
    noise_std: tuple | None = None
    stiff_limit: float | None = DEFAULT_STIFF_LIMIT

    def __post_init__(self):
        if int(self.substeps_per_hour) != self.substeps_per_hour or self.substeps_per_hour < 1:
            raise ValueError("substeps_per_hour must be a positive integer")
        object.__setattr__(self, "substeps_per_hour", int(self.substeps_per_hour))
        if self.stiff_limit is not None:
            if not 0 < self.stiff_limit <= 2.78:
                raise ValueError("stiff_limit must lie in (0, 2.78], the RK4 stability interval")
            object.__setattr__(self, "stiff_limit", float(self.stiff_limit))
        if self.noise_std is not None:
            ns = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (N_STATES,))
            if np.any(ns < 0) or not np.all(np.isfinite(ns)):
                raise ValueError("noise_std must be finite and >= 0")
            object.__setattr__(self, "noise_std", tuple(float(v) for v in ns))


DEFAULT_INITIAL_STATE = SystemState(s=5.5, b1=0.005, b2=0.005, a1=1.545e-2, a2=1.655e-3)


def _as_state(x):
    return x.to_array() if isinstance(x, SystemState) else np.asarray(x, dtype=float)


def _as_input(u):
    return u.to_array() if isinstance(u, LightInput) else np.asarray(u, dtype=float)


# -- kinetics ---------------------------------------------------------------

def growth_rates(x, params: ModelParams) -> np.ndarray:
    """Specific growth rates ``mu`` of both strains, shape ``(..., 2)``.

    Rates are evaluated on the nonnegative part of the state so that transient
    negative Runge-Kutta stage values cannot produce negative or singular rates.
    """
    p = params.arrays()
    x = np.maximum(_as_state(x), 0.0)
    s = x[..., S:S + 1]
    a = x[..., A1:A2 + 1]
    fa = p["f_c"] * a
    return p["mu_max"] * (s / (s + p["k_s"])) * (fa / (fa + p["k_a"]))


def substrate_uptake_rates(x, params: ModelParams) -> np.ndarray:
    return params.arrays()["y_sb"] * growth_rates(x, params)


def amino_synthesis_rates(u, params: ModelParams) -> np.ndarray:
    """Light-induced amino-acid synthesis, a Hill function of each intensity."""
    p = params.arrays()
    u = np.maximum(_as_input(u), 0.0)
    un = u ** p["n"]
    return p["q_a_max"] * un / (un + p["k_I"] ** p["n"])


def growth_rate(state, params: ModelParams, species: int) -> float:
    """Growth rate of ``species`` (0 or 1) in 1/h."""
    return growth_rates(state, params)[..., species]


def substrate_uptake_rate(state, params: ModelParams, species: int) -> float:
    return substrate_uptake_rates(state, params)[..., species]


def amino_synthesis_rate(light, params: ModelParams, species: int) -> float:
    return amino_synthesis_rates(light, params)[..., species]


def _rhs(x, qa, params: ModelParams) -> np.ndarray:
    p = params.arrays()
    mu = growth_rates(x, params)
    b = x[..., B1:B2 + 1]
    a = x[..., A1:A2 + 1]
    dx = np.empty(np.broadcast_shapes(x.shape, mu.shape[:-1] + (N_STATES,)))
    dx[..., S] = -(p["y_sb"] * mu * b).sum(axis=-1) + (p["s_in"] - x[..., S]) * p["d_l"]
    dx[..., B1:B2 + 1] = (mu - p["d_l"]) * b
    dx[..., A1:A2 + 1] = qa - (p["d_a"] + mu) * a
    return dx


def ode_rhs(x, u, params: ModelParams) -> np.ndarray:
    """Time derivative of the state, shape matching ``x``."""
    return _rhs(_as_state(x), amino_synthesis_rates(u, params), params)


# -- substrate-limited regime ------------------------------------------------
#
# k_s is tiny (3e-4 mmol/L), so once the culture has eaten the substrate the
# s-equation relaxes on a time scale of 1e-5 h while b and a move on 1 h.
# An explicit step of 0.05 h is then unstable by orders of magnitude. In that
# regime s is replaced by its quasi-steady value (uptake balances inflow) and
# only the slow states are integrated.

def _uptake_capacity(x, p):
    """``Y_i mu_max_i (f_c a_i / (f_c a_i + k_a_i)) b_i``: uptake rate at saturating s."""
    a = np.maximum(x[..., A1:A2 + 1], 0.0)
    b = np.maximum(x[..., B1:B2 + 1], 0.0)
    fa = p["f_c"] * a
    return p["y_sb"] * p["mu_max"] * fa / (fa + p["k_a"]) * b


def substrate_stiffness(x, params: ModelParams) -> np.ndarray:
    """``|d(ds/dt)/ds|`` in 1/h, the fast eigenvalue of the substrate equation."""
    p = params.arrays()
    x = _as_state(x)
    c = _uptake_capacity(x, p)
    s = np.maximum(x[..., S:S + 1], 0.0)
    return (c * p["k_s"] / (s + p["k_s"]) ** 2).sum(axis=-1) + p["d_l"]


def quasi_steady_substrate(x, params: ModelParams) -> np.ndarray:
    """Substrate level at which total uptake equals the net inflow.

    Solves ``sum_i c_i s / (s + k_s_i) = (s_in - s) d_l`` for ``s`` in
    ``[0, s_in]``. With equal ``k_s`` this is a quadratic; otherwise the
    quadratic root for ``min(k_s)`` (a lower bound) is polished by Newton, which
    converges monotonically because the left side is concave in ``s``.
    """
    p = params.arrays()
    x = _as_state(x)
    c = _uptake_capacity(x, p)
    k, d_l, s_in = p["k_s"], p["d_l"], p["s_in"]
    km = float(k.min())
    B = c.sum(axis=-1) + d_l * (km - s_in)
    disc = np.sqrt(B * B + 4.0 * d_l * d_l * s_in * km)
    pos = B > 0
    # two algebraically equal forms of the positive root, each free of cancellation on its side
    s = np.where(pos, 2.0 * d_l * s_in * km / np.where(pos, B + disc, 1.0), (disc - B) / (2.0 * d_l))
    if k.max() != km:
        for _ in range(50):
            sk = s[..., None] + k
            F = (c * s[..., None] / sk).sum(axis=-1) + d_l * (s - s_in)
            dF = (c * k / sk**2).sum(axis=-1) + d_l
            ds = F / dF
            s = s - ds
            if np.all(np.abs(ds) <= 1e-13 * s):
                break
    return np.clip(s, 0.0, s_in)


# -- discrete-time transition ----------------------------------------------

MAX_HALVINGS = 16


def _rk4(y, qa, f, h):
    k1 = f(y, qa)
    k2 = f(y + 0.5 * h * k1, qa)
    k3 = f(y + 0.5 * h * k2, qa)
    k4 = f(y + h * k3, qa)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_interval(x, u, params: ModelParams, substeps: int, duration: float = 1.0,
                 stiff_limit: float | None = DEFAULT_STIFF_LIMIT) -> np.ndarray:
    """Integrate over ``duration`` hours with fixed-step RK4, input held constant.

    With ``stiff_limit`` set, each substep is checked per state row:

    * if ``h * substrate_stiffness > stiff_limit`` the substrate sits on its
      quasi-steady value and RK4 advances the remaining states;
    * if an explicit step would go negative or land in the stiff regime (the
      culture runs out of substrate mid-step), the step is halved, up to
      ``MAX_HALVINGS`` times.

    Away from substrate limitation neither branch fires and the result is plain
    RK4. States are clamped at zero after every substep.
    """
    x = np.array(_as_state(x), dtype=float)
    shape = x.shape
    x = x.reshape(-1, N_STATES)
    # synthesis depends only on the held input
    qa = np.array(np.broadcast_to(amino_synthesis_rates(u, params), (x.shape[0], N_INPUTS)))
    h = duration / substeps

    def f(y, q):
        return _rhs(y, q, params)

    if stiff_limit is None:
        for _ in range(substeps):
            x = np.maximum(_rk4(x, qa, f, h), 0.0)
        return x.reshape(shape)

    def f_slow(y, q):
        y = y.copy()
        y[:, S] = quasi_steady_substrate(y, params)
        dy = _rhs(y, q, params)
        dy[:, S] = 0.0
        return dy

    def advance(y, q, h, depth):
        out = np.empty_like(y)
        stiff = h * substrate_stiffness(y, params) > stiff_limit
        if stiff.any():
            ys = _rk4(y[stiff], q[stiff], f_slow, h)
            ys[:, S] = quasi_steady_substrate(ys, params)
            out[stiff] = ys
        rest = ~stiff
        if rest.any():
            yr = _rk4(y[rest], q[rest], f, h)
            redo = np.any(yr < 0.0, axis=1) | (h * substrate_stiffness(yr, params) > stiff_limit)
            if depth < MAX_HALVINGS and redo.any():
                y0, q0 = y[rest][redo], q[rest][redo]
                yr[redo] = advance(advance(y0, q0, h / 2, depth + 1), q0, h / 2, depth + 1)
            out[rest] = yr
        return np.maximum(out, 0.0)

    for _ in range(substeps):
        x = advance(x, qa, h, 0)
    return x.reshape(shape)


def step(x, u, params: ModelParams, cfg: IntegratorConfig | None = None, rng=None) -> np.ndarray:
    """Advance the plant by one 1 h control interval.

    ``x`` may be a single state or a batch ``(n, 5)``; ``u`` broadcasts against
    it. With ``cfg.noise_std`` set, zero-mean Gaussian noise is added per state
    component (drawn from ``rng``) and the result is clamped at zero again.

    Raises NonFiniteState if any component is NaN or infinite.
    """
    cfg = cfg or IntegratorConfig()
    x_next = rk4_interval(x, u, params, cfg.substeps_per_hour, stiff_limit=cfg.stiff_limit)
    if cfg.noise_std is not None:
        if rng is None:
            raise ValueError("a random generator is required when noise_std is set")
        x_next = np.maximum(x_next + rng.normal(size=x_next.shape) * np.asarray(cfg.noise_std), 0.0)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("integration produced a non-finite state")
    return x_next


def simulate(x0, inputs, params: ModelParams, cfg: IntegratorConfig | None = None, rng=None) -> np.ndarray:
    """Roll the plant forward under an input sequence ``(t_f, 2)``.

    Returns the state trajectory including ``x0``, shape ``(t_f + 1, 5)``.
    """
    xs = [_as_state(x0)]
    for u in np.asarray(inputs, dtype=float):
        xs.append(step(xs[-1], u, params, cfg, rng))
    return np.stack(xs)
