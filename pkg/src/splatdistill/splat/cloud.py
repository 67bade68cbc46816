"""Gaussian cloud storage.

Parameters are stored unconstrained, the way the optimizer sees them:
log-scales, raw (not necessarily unit) quaternions in ``(w, x, y, z)`` order,
opacity logits, and RGB colors. The activated quantities are exposed as
properties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InitError

PARAM_NAMES = ("means", "log_scales", "quats", "opacity_logits", "colors")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (N, 4) quaternions, normalizing them first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class Gaussian3D:
    """One splat with activated parameters."""

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotation[None])[0]
        return R @ np.diag(self.scale**2) @ R.T


@dataclass
class GaussianCloud:
    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    created_step: np.ndarray = None
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None
    backward_passes: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.created_step is None:
            self.created_step = np.zeros(n, dtype=np.int64)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)

    @classmethod
    def from_activated(cls, centers, scales, opacities, colors, quats=None, step=0) -> "GaussianCloud":
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        n = len(centers)
        if n == 0:
            raise InitError("cannot build an empty cloud")
        scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3))
        if np.any(scales <= 0):
            raise InitError("scales must be positive")
        if quats is None:
            quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        opacities = np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,))
        return cls(
            means=centers.copy(),
            log_scales=np.log(scales),
            quats=np.array(quats, dtype=np.float64),
            opacity_logits=logit(np.clip(opacities, 1e-12, 1 - 1e-12)),
            colors=np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy(),
            created_step=np.full(n, step, dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        q = self.quats[i] / np.linalg.norm(self.quats[i])
        return Gaussian3D(
            center=self.means[i].copy(),
            scale=self.scales[i].copy(),
            rotation=q,
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.quats)

    @property
    def covariances(self) -> np.ndarray:
        R = self.rotations
        M = R * self.scales[:, None, :]
        return M @ np.swapaxes(M, -1, -2)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, params[name])
        self.version += 1

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means.copy(),
            log_scales=self.log_scales.copy(),
            quats=self.quats.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            created_step=self.created_step.copy(),
            grad_accum=self.grad_accum.copy(),
            grad_count=self.grad_count.copy(),
            backward_passes=self.backward_passes,
        )

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means[index],
            log_scales=self.log_scales[index],
            quats=self.quats[index],
            opacity_logits=self.opacity_logits[index],
            colors=self.colors[index],
            created_step=self.created_step[index],
            grad_accum=self.grad_accum[index],
            grad_count=self.grad_count[index],
            backward_passes=self.backward_passes,
        )

    def reset_stats(self) -> None:
        self.grad_accum = np.zeros(len(self))
        self.grad_count = np.zeros(len(self), dtype=np.int64)
        self.backward_passes = 0

    def normalize(self) -> None:
        """Re-project constrained attributes after an unconstrained update."""
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        # rows already at unit length stay bit-identical, so repeated calls are no-ops
        self.quats = np.where(np.abs(norms - 1.0) > 1e-12, self.quats / norms, self.quats)
        self.colors = np.clip(self.colors, 0.0, 1.0)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params().values())
