from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateCloud, ParamError, StateError
from .cloud import GaussianCloud, quat_to_rotmat

GRAD_THRESHOLD = 2e-4
OPACITY_FLOOR = 0.005
SPLIT_SHRINK = 1.6


@dataclass(frozen=True)
class DensifyReport:
    n_cloned: int
    n_split: int
    n_pruned: int


def densify_and_prune(
    cloud: GaussianCloud,
    grad_threshold: float = GRAD_THRESHOLD,
    opacity_floor: float = OPACITY_FLOOR,
    scale_ceiling: float = np.inf,
    mode: str = "both",
    split_scale: float | None = None,
    step: int = 0,
) -> DensifyReport:
    """Clone/split high-gradient Gaussians, then prune faint or oversized ones.

    The mean screen-space gradient accumulated by ``render_backward`` decides
    who densifies. Gaussians whose largest axis is at most ``split_scale``
    (default: 1% of the cloud's bounding-box diagonal) are cloned in place;
    larger ones are replaced by two children offset by half a standard
    deviation along their major axis, each with scale divided by 1.6.

    The cloud is modified in place and its statistics are reset. If pruning
    would leave nothing, :class:`DegenerateCloud` is raised and the cloud is
    left untouched.
    """
    if mode not in ("both", "prune_only"):
        raise ParamError(f"unknown densify mode {mode!r}")
    n_cloned = n_split = 0
    work = cloud.copy()
    if mode == "both":
        if cloud.backward_passes == 0:
            raise StateError("densify needs gradient statistics from at least one backward pass")
        mean_grad = work.grad_accum / np.maximum(work.grad_count, 1)
        hot = mean_grad > grad_threshold
        if split_scale is None:
            extent = np.ptp(work.means, axis=0) if len(work) > 1 else np.ones(3)
            split_scale = 0.01 * float(np.linalg.norm(extent))
        max_scale = work.scales.max(axis=1)
        clone = hot & (max_scale <= split_scale)
        split = hot & (max_scale > split_scale)
        n_cloned, n_split = int(clone.sum()), int(split.sum())
        parts = [work.subset(~split), work.subset(clone)]
        if n_split:
            parents = work.subset(split)
            major = np.argmax(parents.scales, axis=1)
            R = quat_to_rotmat(parents.quats)
            axis_dir = R[np.arange(len(parents)), :, major]
            offset = 0.5 * parents.scales[np.arange(len(parents)), major][:, None] * axis_dir
            children = []
            for sign in (1.0, -1.0):
                child = parents.copy()
                child.means = parents.means + sign * offset
                child.log_scales = parents.log_scales - np.log(SPLIT_SHRINK)
                children.append(child)
            parts.extend(children)
        work = _concat(parts)
        new_count = len(work) - (len(cloud) - n_split)
        if new_count:
            work.created_step[-new_count:] = step
    keep = (work.opacities >= opacity_floor) & (work.scales.max(axis=1) <= scale_ceiling)
    n_pruned = int((~keep).sum())
    if not keep.any():
        raise DegenerateCloud(f"pruning would remove all {len(work)} Gaussians")
    work = work.subset(keep)
    cloud.set_params(work.params())
    cloud.created_step = work.created_step
    cloud.reset_stats()
    return DensifyReport(n_cloned, n_split, n_pruned)


def _concat(parts: list[GaussianCloud]) -> GaussianCloud:
    parts = [p for p in parts if len(p)]
    return GaussianCloud(
        means=np.concatenate([p.means for p in parts]),
        log_scales=np.concatenate([p.log_scales for p in parts]),
        quats=np.concatenate([p.quats for p in parts]),
        opacity_logits=np.concatenate([p.opacity_logits for p in parts]),
        colors=np.concatenate([p.colors for p in parts]),
        created_step=np.concatenate([p.created_step for p in parts]),
    )
