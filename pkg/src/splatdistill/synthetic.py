"""Synthetic subjects and oracle banks for end-to-end runs without real models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .guidance import MockOracle, PromptSet, ScoreConditions
from .posecond import project_keypoints, rasterize_pose, trim_skeleton
from .splat.camera import Camera
from .splat.cloud import GaussianCloud, logit
from .splat.render import render
from .splat.surface import humanoid, humanoid_keypoints, init_from_surface

SKIN = (0.92, 0.72, 0.6)
HAIR = (0.25, 0.15, 0.1)
SHIRT = (0.15, 0.35, 0.8)
STRIPE = (0.95, 0.85, 0.2)
PANTS = (0.2, 0.2, 0.28)


def reference_subject(count: int = 2000, seed: int = 1234, opacity: float = 0.9, scale_factor: float = 1.5) -> GaussianCloud:
    """Colored humanoid used as the ground truth the oracle steers toward.

    Skin-toned face with hair on the back of the head, a striped shirt with
    a yellow band on the subject's left sleeve only (so the left and right
    sides differ), dark trousers.
    """
    cloud = init_from_surface(humanoid(), count, seed=seed, opacity=opacity)
    p = cloud.means
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    colors = np.empty((count, 3))
    colors[:] = SHIRT
    colors[(np.floor((y + 0.9) * 20) % 2 == 0) & (y < 0.45) & (y > 0.05)] = STRIPE
    colors[(x > 0.24) & (y > 0.05)] = STRIPE
    colors[y >= 0.58] = SKIN
    colors[(y >= 0.58) & ((z < -0.02) | (y > 0.82))] = HAIR
    colors[y < 0.02] = PANTS
    cloud.colors = colors
    cloud.log_scales = cloud.log_scales + np.log(scale_factor)
    cloud.opacity_logits = np.full(count, logit(opacity))
    return cloud


def pose_map(cam: Camera) -> np.ndarray:
    """Trimmed, rasterized keypoint map of the reference body seen from ``cam``."""
    skel = project_keypoints(humanoid_keypoints(), cam)
    return rasterize_pose(trim_skeleton(skel, cam.azimuth), cam.width, cam.height)


@dataclass
class OracleFixture:
    """Per-view targets registered on a :class:`MockOracle` under every condition."""

    oracle: MockOracle
    prompts: PromptSet
    cameras: list
    targets: list
    alphas: list
    conditions: list

    def conditions_for(self, k: int) -> ScoreConditions:
        return self.conditions[k]


def build_oracle(subject: GaussianCloud, cameras: list, background=(1.0, 1.0, 1.0), prompts: PromptSet | None = None,
                 negative_subject: GaussianCloud | None = None) -> OracleFixture:
    """Render ``subject`` from each camera and register the renders as oracle targets.

    Every condition of a view maps to that view's render, except the
    negative prompt when ``negative_subject`` is given. The pose map is part
    of each view's conditions, so views are told apart by their skeletons.
    """
    prompts = prompts or PromptSet.random()
    oracle = MockOracle()
    targets, alphas, conds = [], [], []
    for cam in cameras:
        out = render(subject, cam, background, keep_trace=False)
        c = prompts.conditions(pose=pose_map(cam), view=cam)
        for cond in c.all():
            oracle.register(cond, out.image)
        if negative_subject is not None:
            oracle.register(c.negative, render(negative_subject, cam, background, keep_trace=False).image)
        targets.append(out.image)
        alphas.append(out.alpha)
        conds.append(c)
    return OracleFixture(oracle, prompts, list(cameras), targets, alphas, conds)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return float("inf") if mse == 0 else -10.0 * np.log10(mse)


def jittered_views(rng: np.random.Generator, n_views: int = 16, size: int = 64, jitter: float = 0.45) -> list:
    """One smooth base image plus independent smooth perturbations per view.

    Stands in for a ring of stage-1 renders that agree on layout but
    disagree in detail, which is what cross-view refinement should reduce.
    """
    base = gaussian_filter(rng.random((size, size, 3)), (3, 3, 0))
    return [np.clip(base + jitter * gaussian_filter(rng.standard_normal((size, size, 3)), (2, 2, 0)), 0.0, 1.0)
            for _ in range(n_views)]
