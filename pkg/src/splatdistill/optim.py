"""Adam with per-attribute learning rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ShapeError


@dataclass
class LearningRates:
    """Per-attribute step sizes; the center rate decays exponentially."""

    means: float = 1.6e-4
    means_final: float = 1.6e-6
    decay_steps: int = 800
    log_scales: float = 5e-3
    quats: float = 1e-3
    opacity_logits: float = 5e-2
    colors: float = 2.5e-3

    def at(self, step: int) -> dict[str, float]:
        frac = min(max(step / max(self.decay_steps, 1), 0.0), 1.0)
        means = math.exp((1 - frac) * math.log(self.means) + frac * math.log(self.means_final))
        return {
            "means": means,
            "log_scales": self.log_scales,
            "quats": self.quats,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def reset_moments(self) -> None:
        self.m.clear()
        self.v.clear()


def adam_step(params: dict, grads: dict, state: AdamState, lrs: dict) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays.

    ``state`` is updated in place. Non-finite gradients raise
    :class:`NumericsError` before anything is touched.
    """
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, parameter has {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1**state.step
    bc2 = 1 - b2**state.step
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or m.shape != np.shape(g):
            m = np.zeros_like(g, dtype=np.float64)
            v = np.zeros_like(g, dtype=np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = params[name] - lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


def apply_adam(cloud, grads: dict, state: AdamState, lrs: dict) -> None:
    """Adam step on a :class:`GaussianCloud`, then re-project constrained attributes."""
    new = adam_step(cloud.params(), grads, state, lrs)
    cloud.set_params(new)
    cloud.normalize()
