"""Diffusion noising, epsilon predictors and score-distillation steps.

Everything runs in pixel space. The real diffusion prior is replaced by
:class:`MockOracle`, whose prediction exactly inverts the forward noising
toward a known per-condition target image, so the effect of every score
combination can be worked out in closed form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import NumericsError, ParamError, RangeError, SchemaError
from .optim import AdamState, LearningRates, apply_adam
from .schedule import PhaseTable, sample_timestep
from .splat.camera import Camera
from .splat.cloud import GaussianCloud
from .splat.render import render, render_backward

GAMMA = 7.5
TAU = 170
T_UNIFORM = (20, 980)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule indexed by timestep ``t = 1..steps``."""

    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 1000
    betas: np.ndarray = field(init=False, repr=False)
    alphas_cumprod: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.linspace(self.beta_start, self.beta_end, self.steps)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas_cumprod", np.cumprod(1.0 - betas))

    def alpha_bar(self, t: int) -> float:
        if not 1 <= t <= self.steps:
            raise RangeError(f"timestep {t} outside [1, {self.steps}]")
        return float(self.alphas_cumprod[int(t) - 1])


DEFAULT_SCHEDULE = NoiseSchedule()


def add_noise(x: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


@dataclass(frozen=True)
class Condition:
    """Text embedding, identity embedding and optional pose map.

    ``view`` rides along for predictors that need the camera; it is not
    part of the fingerprint.
    """

    text: np.ndarray
    identity: np.ndarray
    pose: np.ndarray | None = None
    view: Camera | None = field(default=None, compare=False)

    def fingerprint(self, include_pose: bool = True) -> str:
        h = hashlib.sha256()
        for arr in (self.text, self.identity):
            a = np.ascontiguousarray(arr, dtype=np.float64)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        if include_pose and self.pose is not None:
            p = np.ascontiguousarray(self.pose, dtype=np.float64)
            h.update(b"pose" + str(p.shape).encode())
            h.update(p.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class PromptSet:
    """The six embeddings the score combinations draw from.

    Null text and the zero identity image are canonical all-zero vectors.
    """

    text: np.ndarray
    negative: np.ndarray
    identity: np.ndarray
    mean_identity: np.ndarray

    @classmethod
    def random(cls, dim: int = 16, seed: int = 0) -> "PromptSet":
        rng = np.random.default_rng(seed)
        return cls(*(rng.standard_normal(dim) for _ in range(4)))

    @property
    def null_text(self) -> np.ndarray:
        return np.zeros_like(self.text)

    @property
    def zero_identity(self) -> np.ndarray:
        return np.zeros_like(self.identity)

    def named(self, text: str, identity: str) -> tuple[np.ndarray, np.ndarray]:
        texts = {"y": self.text, "null": self.null_text, "neg": self.negative}
        ids = {"ip": self.identity, "mean": self.mean_identity, "zero": self.zero_identity}
        if text not in texts or identity not in ids:
            raise SchemaError(f"unknown condition name {text}+{identity}")
        return texts[text], ids[identity]

    def conditions(self, pose=None, view=None) -> "ScoreConditions":
        def c(text, identity):
            return Condition(*self.named(text, identity), pose=pose, view=view)

        return ScoreConditions(
            text=c("y", "zero"), null=c("null", "zero"),
            identity=c("y", "ip"), mean=c("null", "mean"), negative=c("neg", "zero"),
        )


CONDITION_NAMES = [f"{t}+{i}" for t in ("y", "null", "neg") for i in ("ip", "mean", "zero")]


@dataclass(frozen=True)
class ScoreConditions:
    text: Condition  # y, used by plain SDS
    null: Condition  # null text
    identity: Condition  # y with the identity image
    mean: Condition  # null text with an unrelated face
    negative: Condition  # negative prompt with the all-zero image

    def all(self) -> list[Condition]:
        return [self.text, self.null, self.identity, self.mean, self.negative]


class EpsilonPredictor(Protocol):
    def predict(self, x_t: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...


class MockOracle:
    """Closed-form predictor: the noise that would have produced ``x_t`` from the condition's target.

    Targets are looked up by condition fingerprint (with, then without the
    pose map), then through ``resolver``.
    """

    def __init__(self, bank: dict | None = None, resolver: Callable[[Condition], np.ndarray] | None = None,
                 schedule: NoiseSchedule = DEFAULT_SCHEDULE):
        self.bank = dict(bank or {})
        self.resolver = resolver
        self.schedule = schedule

    def register(self, cond: Condition, target: np.ndarray, include_pose: bool = True) -> None:
        self.bank[cond.fingerprint(include_pose)] = np.asarray(target, dtype=np.float64)

    def target(self, cond: Condition) -> np.ndarray:
        for key in (cond.fingerprint(True), cond.fingerprint(False)):
            if key in self.bank:
                return self.bank[key]
        if self.resolver is not None:
            return self.resolver(cond)
        raise SchemaError("no target registered for this condition")

    def predict(self, x_t: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        target = self.target(cond)
        if target.shape != x_t.shape:
            raise SchemaError(f"target shape {target.shape} does not match input {x_t.shape}")
        return (x_t - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)

    @classmethod
    def from_directory(cls, path, prompts: PromptSet, schedule: NoiseSchedule = DEFAULT_SCHEDULE) -> "MockOracle":
        """Load a bank from ``manifest.json`` mapping ``"<text>+<identity>"`` names to PPM files.

        Text names are ``y``, ``null``, ``neg``; identity names ``ip``,
        ``mean``, ``zero``. The key ``"*"`` supplies a fallback target.
        """
        from .io import read_ppm

        root = Path(path)
        manifest = json.loads((root / "manifest.json").read_text())
        targets = manifest.get("targets", manifest)
        oracle = cls(schedule=schedule)
        fallback = None
        for name, fname in targets.items():
            img = read_ppm(root / fname)
            if name == "*":
                fallback = img
                continue
            text, identity = name.split("+")
            oracle.register(Condition(*prompts.named(text, identity)), img, include_pose=False)
        if fallback is not None:
            oracle.resolver = lambda cond: fallback
        return oracle


def sds_difference(pred: EpsilonPredictor, x_t, t: int, conds: ScoreConditions, eps, gamma: float = GAMMA):
    """Classifier-free-guided noise residual of plain score distillation."""
    if gamma < 0:
        raise ParamError("guidance scale must be non-negative")
    e_null = pred.predict(x_t, t, conds.null)
    e_text = pred.predict(x_t, t, conds.text)
    return e_null + gamma * (e_text - e_null) - eps


def hds_difference(pred: EpsilonPredictor, x_t, t: int, conds: ScoreConditions, gamma: float = GAMMA, tau: int = TAU):
    """Identity-conditioned score difference without the sampled-noise residual.

    The rectifying term is the mean-face prediction below ``tau`` and the
    mean-face prediction minus the negative-prompt prediction from ``tau`` on.
    """
    if gamma < 0:
        raise ParamError("guidance scale must be non-negative")
    if not 1 <= tau <= 1000:
        raise ParamError(f"tau must lie in [1, 1000], got {tau}")
    e_mean = pred.predict(x_t, t, conds.mean)
    e_id = pred.predict(x_t, t, conds.identity)
    rect = e_mean
    if t >= tau:
        rect = e_mean - pred.predict(x_t, t, conds.negative)
    return rect + gamma * (e_id - e_mean)


MODES = ("sds", "hds", "ahds")


@dataclass
class DistillConfig:
    mode: str = "ahds"
    gamma: float = GAMMA
    tau: int = TAU
    # None divides by the pixel count, as if the score were a mean-reduced loss
    grad_scale: float | None = None
    weight: Callable[[int], float] | None = None  # w(t); constant 1 when None
    background: tuple = (1.0, 1.0, 1.0)
    t_uniform: tuple = T_UNIFORM
    lrs: LearningRates = field(default_factory=lambda: LearningRates(
        means=1e-4, means_final=1e-6, decay_steps=2400, log_scales=5e-3, quats=1e-3,
        opacity_logits=5e-2, colors=2e-2))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParamError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class AdaptiveSchedule:
    """A fitted t-i curve together with the phase table it came from."""

    curve: np.ndarray
    table: PhaseTable


@dataclass(frozen=True)
class StepReport:
    step: int
    t: int
    mean_abs_delta: float
    loss_proxy: float  # half the mean squared score difference
    grad_norms: dict
    n_gaussians: int


def choose_timestep(i: int, cfg: DistillConfig, rng: np.random.Generator, schedule: AdaptiveSchedule | None) -> int:
    if cfg.mode == "ahds":
        if schedule is None:
            raise ParamError("AHDS needs a fitted adaptive schedule")
        return sample_timestep(i, schedule.curve, schedule.table, rng)
    lo, hi = cfg.t_uniform
    return int(rng.integers(lo, hi + 1))


def distill_step(
    cloud: GaussianCloud,
    cam: Camera,
    pred: EpsilonPredictor,
    conds: ScoreConditions,
    i: int,
    rng: np.random.Generator,
    cfg: DistillConfig,
    optimizer: AdamState,
    schedule: AdaptiveSchedule | None = None,
    noise: NoiseSchedule = DEFAULT_SCHEDULE,
) -> StepReport:
    """Render, noise, score and take one Adam step on ``cloud``.

    Raises :class:`NumericsError` without touching the cloud if the score
    difference is not finite.
    """
    t = choose_timestep(i, cfg, rng, schedule)
    out = render(cloud, cam, cfg.background)
    x = out.image
    eps = rng.standard_normal(x.shape)
    x_t = add_noise(x, t, eps, noise)
    if cfg.mode == "sds":
        delta = sds_difference(pred, x_t, t, conds, eps, cfg.gamma)
    else:
        delta = hds_difference(pred, x_t, t, conds, cfg.gamma, cfg.tau)
    if not np.all(np.isfinite(delta)):
        raise NumericsError(f"non-finite score difference at step {i}, t={t}")
    w = 1.0 if cfg.weight is None else float(cfg.weight(t))
    scale = 1.0 / (cam.width * cam.height) if cfg.grad_scale is None else cfg.grad_scale
    grads = render_backward(cloud, out, w * scale * delta)
    gd = grads.as_dict()
    apply_adam(cloud, gd, optimizer, cfg.lrs.at(i))
    return StepReport(
        step=i,
        t=t,
        mean_abs_delta=float(np.mean(np.abs(delta))),
        loss_proxy=float(0.5 * np.mean(delta * delta)),
        grad_norms={k: float(np.linalg.norm(v)) for k, v in gd.items()},
        n_gaussians=len(cloud),
    )
