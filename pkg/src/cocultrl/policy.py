"""Gaussian control policy on a LeakyReLU multilayer perceptron.

The network has a shared trunk and two linear heads: one for the action mean,
one for the pre-activation of the standard deviation, ``std = softplus(z) +
std_floor``. Gradients of the action log-density are computed by a hand-written
backward pass over a batch of observations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatch

LOG_2PI = np.log(2.0 * np.pi)
CHECKPOINT_VERSION = 1


def leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Architecture:
    obs_dim: int = 15
    hidden: tuple = (20, 20, 20, 20)
    act_dim: int = 2
    activation: str = "leaky_relu"
    negative_slope: float = 0.01
    std_floor: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation != "leaky_relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be > 0")

    def shapes(self):
        """(name, shape) of every parameter array in flattening order."""
        out = []
        widths = (self.obs_dim,) + self.hidden
        for i in range(len(self.hidden)):
            out.append((f"W{i}", (widths[i], widths[i + 1])))
            out.append((f"b{i}", (widths[i + 1],)))
        out += [("W_mean", (widths[-1], self.act_dim)), ("b_mean", (self.act_dim,)),
                ("W_std", (widths[-1], self.act_dim)), ("b_std", (self.act_dim,))]
        return out

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def header(self):
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden), "act_dim": self.act_dim,
                "activation": self.activation, "negative_slope": self.negative_slope,
                "std_floor": self.std_floor}


class PolicyParams:
    """Network weights held as one flat vector with named array views into it."""

    def __init__(self, arch: Architecture, flat):
        flat = np.array(flat, dtype=float)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.shape}")
        self.arch = arch
        self.flat = flat
        self.arrays = {}
        i = 0
        for name, shape in arch.shapes():
            n = int(np.prod(shape))
            self.arrays[name] = flat[i:i + n].reshape(shape)
            i += n

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return PolicyParams(self.arch, self.flat)

    def with_flat(self, flat):
        return PolicyParams(self.arch, flat)

    @classmethod
    def zeros(cls, arch: Architecture):
        return cls(arch, np.zeros(arch.n_params))

    @classmethod
    def initialize(cls, arch: Architecture, rng, u_max, head_scale=1e-2,
                   mean_bias_fraction=0.25, std_bias=0.0):
        """He-style uniform fan-in init for the trunk, small uniform heads.

        The mean-head bias starts at ``mean_bias_fraction * u_max`` per channel.
        """
        p = cls.zeros(arch)
        for name, shape in arch.shapes():
            if name.startswith("W") and name[1:].isdigit():
                lim = np.sqrt(6.0 / shape[0])
                p.arrays[name][...] = rng.uniform(-lim, lim, size=shape)
            elif name in ("W_mean", "W_std"):
                p.arrays[name][...] = rng.uniform(-head_scale, head_scale, size=shape)
        p.arrays["b_mean"][...] = mean_bias_fraction * np.broadcast_to(u_max, (arch.act_dim,))
        p.arrays["b_std"][...] = std_bias
        return p


@dataclass
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class SampledAction:
    raw: np.ndarray
    applied: np.ndarray
    log_prob: np.ndarray


def _forward(obs, params: PolicyParams):
    arch = params.arch
    h = np.atleast_2d(np.asarray(obs, dtype=float))
    if h.shape[-1] != arch.obs_dim:
        raise ValueError(f"observation width {h.shape[-1]} != {arch.obs_dim}")
    pre, post = [], [h]
    for i in range(len(arch.hidden)):
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        h = leaky_relu(z, arch.negative_slope)
        pre.append(z)
        post.append(h)
    mean = h @ params["W_mean"] + params["b_mean"]
    z_std = h @ params["W_std"] + params["b_std"]
    std = softplus(z_std) + arch.std_floor
    return mean, std, (pre, post, z_std)


def forward(obs, params: PolicyParams) -> ActionDistribution:
    """Action distribution for one observation ``(15,)`` or a batch ``(n, 15)``."""
    mean, std, _ = _forward(obs, params)
    if np.ndim(obs) == 1:
        mean, std = mean[0], std[0]
    return ActionDistribution(mean, std)


def gaussian_log_prob(raw, mean, std):
    z = (raw - mean) / std
    return np.sum(-0.5 * z * z - np.log(std) - 0.5 * LOG_2PI, axis=-1)


def sample(dist: ActionDistribution, u_max, rng) -> SampledAction:
    """Draw a raw Gaussian action and clamp it into ``[0, u_max]``.

    The log-probability is that of the raw (unclamped) draw.
    """
    raw = dist.mean + dist.std * rng.standard_normal(np.shape(dist.mean))
    return SampledAction(raw, np.clip(raw, 0.0, u_max), gaussian_log_prob(raw, dist.mean, dist.std))


def backward(params: PolicyParams, cache, d_mean, d_std) -> np.ndarray:
    """Reverse pass: flat gradient of ``sum(d_mean*mean + d_std*std)`` over the batch."""
    arch = params.arch
    pre, post, z_std = cache
    grads = {}
    h = post[-1]
    d_z_std = d_std * sigmoid(z_std)
    grads["W_mean"] = h.T @ d_mean
    grads["b_mean"] = d_mean.sum(axis=0)
    grads["W_std"] = h.T @ d_z_std
    grads["b_std"] = d_z_std.sum(axis=0)
    dh = d_mean @ params["W_mean"].T + d_z_std @ params["W_std"].T
    for i in reversed(range(len(arch.hidden))):
        dz = dh * np.where(pre[i] > 0, 1.0, arch.negative_slope)
        grads[f"W{i}"] = post[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i:
            dh = dz @ params[f"W{i}"].T
    return np.concatenate([grads[name].ravel() for name, _ in arch.shapes()])


def weighted_log_prob_grad(obs, raw, weights, params: PolicyParams) -> np.ndarray:
    """Gradient of ``sum_k weights[k] * log pi(raw[k] | obs[k])``."""
    obs = np.atleast_2d(obs)
    raw = np.atleast_2d(raw)
    w = np.asarray(weights, dtype=float).reshape(-1, 1)
    mean, std, cache = _forward(obs, params)
    diff = raw - mean
    d_mean = w * diff / std**2
    d_std = w * (diff**2 / std**3 - 1.0 / std)
    return backward(params, cache, d_mean, d_std)


def log_prob_grad(obs, raw_action, params: PolicyParams) -> np.ndarray:
    """Exact gradient of ``log pi(raw_action | obs)`` w.r.t. the flat parameters."""
    return weighted_log_prob_grad(obs, raw_action, np.ones(1), params)


def log_prob(obs, raw_action, params: PolicyParams):
    d = forward(obs, params)
    return gaussian_log_prob(np.asarray(raw_action, dtype=float), d.mean, d.std)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params: PolicyParams, extra=None):
    """JSON checkpoint: architecture header plus the flat vector.

    Floats are written with ``repr`` precision so reloading is lossless.
    """
    doc = {"format": "cocultrl-policy", "version": CHECKPOINT_VERSION,
           "architecture": params.arch.header(), "n_params": params.arch.n_params,
           "params": [float(v) for v in params.flat]}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path, expected: Architecture | None = None) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "cocultrl-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} policy checkpoint")
    arch = Architecture(**doc["architecture"])
    if expected is not None and arch != expected:
        raise ArchitectureMismatch(f"checkpoint has {arch.header()}, config expects {expected.header()}")
    return PolicyParams(arch, doc["params"])
