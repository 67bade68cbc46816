"""Surface priors for initialization: triangle meshes and a capsule humanoid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InitError
from .cloud import GaussianCloud


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def triangle_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.faces)]
        return used.min(axis=0), used.max(axis=0)


@dataclass(frozen=True)
class Capsule:
    p0: tuple
    p1: tuple
    radius: float
    part: str = ""

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.p1, self.p0)))

    @property
    def area(self) -> float:
        return 2 * np.pi * self.radius * self.length + 4 * np.pi * self.radius**2


@dataclass(frozen=True)
class CapsuleBody:
    capsules: tuple

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([np.minimum(c.p0, c.p1) - c.radius for c in self.capsules], axis=0)
        hi = np.max([np.maximum(c.p0, c.p1) + c.radius for c in self.capsules], axis=0)
        return lo, hi

    def part_names(self) -> list[str]:
        return [c.part for c in self.capsules]


def humanoid(height: float = 1.8) -> CapsuleBody:
    """Neutral standing figure centered at the origin, facing +z, 1.8 units tall by default."""
    s = height / 1.8
    y0 = -0.9

    def P(x, y, z=0.0):
        return (x * s, (y0 + y) * s, z * s)

    caps = [
        Capsule(P(0, 1.66), P(0, 1.66), 0.12 * s, "head"),
        Capsule(P(0, 1.47), P(0, 1.53), 0.05 * s, "neck"),
        Capsule(P(0, 0.98), P(0, 1.32), 0.15 * s, "torso"),
        Capsule(P(-0.2, 1.38), P(0.2, 1.38), 0.06 * s, "shoulders"),
        Capsule(P(-0.1, 0.92), P(0.1, 0.92), 0.12 * s, "pelvis"),
        Capsule(P(0.26, 1.36), P(0.32, 1.08), 0.045 * s, "left_upper_arm"),
        Capsule(P(0.32, 1.08), P(0.35, 0.82), 0.04 * s, "left_forearm"),
        Capsule(P(-0.26, 1.36), P(-0.32, 1.08), 0.045 * s, "right_upper_arm"),
        Capsule(P(-0.32, 1.08), P(-0.35, 0.82), 0.04 * s, "right_forearm"),
        Capsule(P(0.1, 0.84), P(0.11, 0.47), 0.07 * s, "left_thigh"),
        Capsule(P(0.11, 0.47), P(0.11, 0.1), 0.055 * s, "left_shin"),
        Capsule(P(-0.1, 0.84), P(-0.11, 0.47), 0.07 * s, "right_thigh"),
        Capsule(P(-0.11, 0.47), P(-0.11, 0.1), 0.055 * s, "right_shin"),
    ]
    return CapsuleBody(tuple(caps))


def humanoid_keypoints(height: float = 1.8) -> dict[str, np.ndarray]:
    """3D joint locations of :func:`humanoid` in the 18-point body layout."""
    s = height / 1.8
    y0 = -0.9
    pts = {
        "nose": (0, 1.64, 0.12),
        "left_eye": (0.04, 1.69, 0.1),
        "right_eye": (-0.04, 1.69, 0.1),
        "left_ear": (0.12, 1.66, 0.0),
        "right_ear": (-0.12, 1.66, 0.0),
        "neck": (0, 1.45, 0),
        "left_shoulder": (0.22, 1.38, 0),
        "right_shoulder": (-0.22, 1.38, 0),
        "left_elbow": (0.32, 1.08, 0),
        "right_elbow": (-0.32, 1.08, 0),
        "left_wrist": (0.35, 0.82, 0),
        "right_wrist": (-0.35, 0.82, 0),
        "left_hip": (0.1, 0.88, 0),
        "right_hip": (-0.1, 0.88, 0),
        "left_knee": (0.11, 0.47, 0),
        "right_knee": (-0.11, 0.47, 0),
        "left_ankle": (0.11, 0.1, 0),
        "right_ankle": (-0.11, 0.1, 0),
    }
    return {k: np.array([x * s, (y0 + y) * s, z * s]) for k, (x, y, z) in pts.items()}


def sample_mesh(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform points on a triangle mesh. Returns points and face indices."""
    areas = mesh.triangle_areas()
    face = rng.choice(len(areas), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    tri = mesh.vertices[mesh.faces[face]]
    return np.einsum("nk,nkd->nd", bary, tri), face


def _unit_vectors(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_capsules(body: CapsuleBody, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform points on each capsule surface. Returns points and capsule indices.

    Overlapping capsules are sampled independently, so some points fall
    inside neighboring parts; for an initialization prior that is harmless.
    """
    areas = np.array([c.area for c in body.capsules])
    which = rng.choice(len(areas), size=count, p=areas / areas.sum())
    pts = np.empty((count, 3))
    for ci in np.unique(which):
        cap = body.capsules[ci]
        sel = np.flatnonzero(which == ci)
        m = len(sel)
        p0 = np.asarray(cap.p0, dtype=np.float64)
        p1 = np.asarray(cap.p1, dtype=np.float64)
        L = cap.length
        r = cap.radius
        if L < 1e-12:
            pts[sel] = p0 + r * _unit_vectors(rng, m)
            continue
        axis = (p1 - p0) / L
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        side_area = 2 * np.pi * r * L
        on_side = rng.random(m) < side_area / cap.area
        out = np.empty((m, 3))
        k = int(on_side.sum())
        h = rng.random(k) * L
        phi = rng.random(k) * 2 * np.pi
        out[on_side] = p0 + h[:, None] * axis + r * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        dirs = _unit_vectors(rng, m - k)
        along = dirs @ axis
        base = np.where(along[:, None] >= 0, p1, p0)
        out[~on_side] = base + r * dirs
        pts[sel] = out
    return pts, which


def init_from_surface(surface, count: int, seed=0, opacity: float = 0.1, color=0.5) -> GaussianCloud:
    """Seed ``count`` isotropic gray Gaussians on a mesh or capsule body.

    All Gaussians share one scale: half the mean nearest-neighbor spacing of
    the sampled centers.
    """
    if count < 1:
        raise InitError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    if isinstance(surface, TriangleMesh):
        if len(surface.faces) == 0 or len(surface.vertices) == 0:
            raise InitError("mesh has no triangles")
        areas = surface.triangle_areas()
        if np.any(areas <= 1e-15):
            raise InitError("mesh contains degenerate triangles")
        centers, _ = sample_mesh(surface, count, rng)
        lo, hi = surface.bounds()
    elif isinstance(surface, CapsuleBody):
        if not surface.capsules:
            raise InitError("capsule body is empty")
        centers, _ = sample_capsules(surface, count, rng)
        lo, hi = surface.bounds()
    else:
        raise InitError(f"unsupported surface type {type(surface).__name__}")
    if count > 1:
        dist, _ = cKDTree(centers).query(centers, k=2)
        spacing = float(np.mean(dist[:, 1]))
    else:
        spacing = 0.0
    if spacing <= 0:
        spacing = 0.01 * float(np.linalg.norm(hi - lo))
    return GaussianCloud.from_activated(centers, 0.5 * spacing, opacity, color)
