"""Reconstruction-based polishing of a Gaussian cloud against target views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import EmptySubject, ParamError, ShapeError
from .optim import AdamState, LearningRates, adam_step, apply_adam
from .splat.camera import Camera
from .splat.cloud import GaussianCloud
from .splat.render import GaussianGrads, render, render_backward

__all__ = [
    "AdamState", "adam_step", "CropBox", "crop_box", "crop_and_downsample", "crop_backward",
    "PerceptualProxy", "recon_loss", "ReconConfig", "TargetView", "optimize_stage2",
]

ALPHA_THRESHOLD = 0.01


@dataclass(frozen=True)
class CropBox:
    """Half-open pixel rectangle ``[y0, y1) x [x0, x1)``."""

    y0: int
    y1: int
    x0: int
    x1: int

    def union(self, other: "CropBox") -> "CropBox":
        return CropBox(min(self.y0, other.y0), max(self.y1, other.y1), min(self.x0, other.x0), max(self.x1, other.x1))


def crop_box(alpha: np.ndarray, margin: int = 0) -> CropBox:
    """Tight box around ``alpha > 0.01`` grown by ``margin`` and clamped to the image."""
    ys, xs = np.nonzero(np.asarray(alpha) > ALPHA_THRESHOLD)
    if ys.size == 0:
        raise EmptySubject("alpha map has no covered pixels")
    h, w = np.shape(alpha)
    return CropBox(max(ys.min() - margin, 0), min(ys.max() + 1 + margin, h),
                   max(xs.min() - margin, 0), min(xs.max() + 1 + margin, w))


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // factor, w // factor
    img = img[: h2 * factor, : w2 * factor]
    return img.reshape(h2, factor, w2, factor, *img.shape[2:]).mean(axis=(1, 3))


def crop_and_downsample(img: np.ndarray, alpha_map: np.ndarray | None = None, margin: int = 0, factor: int = 2,
                        box: CropBox | None = None) -> np.ndarray:
    """Crop to the subject and box-filter by ``factor``.

    Rows or columns that do not fill a whole block are dropped. Pass ``box``
    to reuse a crop computed elsewhere.
    """
    if factor < 1:
        raise ParamError("downsample factor must be at least 1")
    if box is None:
        if alpha_map is None:
            raise ParamError("need an alpha map or a crop box")
        if np.shape(alpha_map) != np.shape(img)[:2]:
            raise ShapeError("alpha map does not match the image")
        box = crop_box(alpha_map, margin)
    return _downsample(np.asarray(img, dtype=np.float64)[box.y0:box.y1, box.x0:box.x1], factor)


def crop_backward(grad: np.ndarray, box: CropBox, factor: int, shape) -> np.ndarray:
    """Adjoint of :func:`crop_and_downsample` for a fixed box."""
    out = np.zeros(shape)
    h2, w2 = grad.shape[:2]
    up = np.repeat(np.repeat(grad, factor, axis=0), factor, axis=1) / (factor * factor)
    out[box.y0:box.y0 + h2 * factor, box.x0:box.x0 + w2 * factor] = up
    return out


@dataclass(frozen=True)
class PerceptualProxy:
    """Mean squared difference between images blurred at several scales.

    Zero padding keeps each blur self-adjoint, which makes the gradient a
    second blur of the blurred difference.
    """

    sigmas: tuple = (1.0, 2.0, 4.0)

    def _blur(self, x: np.ndarray, s: float) -> np.ndarray:
        sig = (s, s, 0.0) if x.ndim == 3 else s
        return gaussian_filter(x, sig, mode="constant", cval=0.0)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.value_and_grad(x, y)[0]

    def value_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        n = d.size * len(self.sigmas)
        val, grad = 0.0, np.zeros_like(d)
        for s in self.sigmas:
            bd = self._blur(d, s)
            val += float(np.sum(bd * bd)) / n
            grad += 2.0 * self._blur(bd, s) / n
        return val, grad


def recon_loss(rendered: np.ndarray, target: np.ndarray, lambda_l1: float = 10.0, lambda_perc: float = 15.0,
               perceptual=PerceptualProxy()) -> tuple[float, np.ndarray]:
    """Weighted L1 plus perceptual loss and its gradient with respect to ``rendered``."""
    if np.shape(rendered) != np.shape(target):
        raise ShapeError(f"rendered {np.shape(rendered)} vs target {np.shape(target)}")
    d = np.asarray(rendered, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    loss = lambda_l1 * float(np.mean(np.abs(d)))
    grad = lambda_l1 * np.sign(d) / d.size
    if lambda_perc:
        pv, pg = perceptual.value_and_grad(rendered, target)
        loss += lambda_perc * pv
        grad = grad + lambda_perc * pg
    return loss, grad


@dataclass
class ReconConfig:
    lambda_l1: float = 10.0
    lambda_perc: float = 15.0
    batch: int = 8
    steps: int = 800
    lrs: LearningRates = field(default_factory=LearningRates)
    margin: int = 4
    factor: int = 2
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_perc < 0:
            raise ParamError("loss weights must be non-negative")
        if self.batch < 1 or self.steps < 0 or self.factor < 1 or self.margin < 0:
            raise ParamError("batch and factor must be >= 1, steps and margin >= 0")
        rates = self.lrs.at(0)
        if any(v <= 0 for v in rates.values()):
            raise ParamError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "lrs"}
        d["background"] = list(self.background)
        d["lrs"] = self.lrs.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ReconConfig":
        data = dict(data)
        if "lrs" in data:
            data["lrs"] = LearningRates(**data["lrs"])
        if "background" in data:
            data["background"] = tuple(data["background"])
        return cls(**data)


@dataclass
class TargetView:
    """A camera with the image the cloud should reproduce from it.

    ``alpha`` marks the subject in the target; when absent only the
    render's own coverage decides the crop.
    """

    camera: Camera
    image: np.ndarray
    alpha: np.ndarray | None = None


def _view_loss(cloud, view: TargetView, cfg: ReconConfig, with_grad: bool):
    out = render(cloud, view.camera, cfg.background, keep_trace=with_grad)
    box = None
    for a in (view.alpha, out.alpha):
        if a is not None and np.any(np.asarray(a) > ALPHA_THRESHOLD):
            b = crop_box(a, cfg.margin)
            box = b if box is None else box.union(b)
    if box is None:
        raise EmptySubject("neither the render nor the target covers any pixel")
    r = crop_and_downsample(out.image, box=box, factor=cfg.factor)
    t = crop_and_downsample(view.image, box=box, factor=cfg.factor)
    loss, g = recon_loss(r, t, cfg.lambda_l1, cfg.lambda_perc)
    return out, box, loss, g


def stage2_loss(cloud: GaussianCloud, views: list, cfg: ReconConfig) -> float:
    """Mean reconstruction loss over all ``views`` (no gradients)."""
    return float(np.mean([_view_loss(cloud, v, cfg, False)[2] for v in views]))


def optimize_stage2(cloud: GaussianCloud, views: list, cfg: ReconConfig, rng: np.random.Generator,
                    optimizer: AdamState | None = None) -> list[dict]:
    """Fit ``cloud`` to the target views with Adam; returns the per-step loss history.

    Each step draws ``cfg.batch`` distinct views, averages their losses and
    gradients in ascending view order and takes one optimizer step.
    """
    if len(views) < cfg.batch:
        raise ParamError(f"batch of {cfg.batch} needs at least that many views, got {len(views)}")
    optimizer = optimizer or AdamState()
    history = []
    for step in range(1, cfg.steps + 1):
        batch = np.sort(rng.choice(len(views), size=cfg.batch, replace=False))
        total = GaussianGrads.zeros(len(cloud))
        loss = 0.0
        for j in batch:
            view = views[j]
            out, box, l, g = _view_loss(cloud, view, cfg, True)
            full = crop_backward(g, box, cfg.factor, out.image.shape)
            total += render_backward(cloud, out, full / cfg.batch)
            loss += l / cfg.batch
        apply_adam(cloud, total.as_dict(), optimizer, cfg.lrs.at(step - 1))
        history.append({"step": step, "loss": loss, "views": " ".join(str(int(j)) for j in batch)})
    return history
