"""View-dependent pose skeleton trimming and pose-map rasterization.

Azimuth follows the camera convention of :mod:`splatdistill.splat.camera`:
0 is the frontal view. As the azimuth grows from 0 the subject's left side
turns away first, so the left ear drops out past 60 degrees, then the left
eye, then the right eye. Inside the back sector only the two ears remain.
Azimuth ``360 - a`` is the mirror image of ``a`` with left and right swapped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .splat.camera import ORTHOGRAPHIC, Camera

FACE_KEYPOINTS = ("nose", "left_eye", "right_eye", "left_ear", "right_ear")
BODY_KEYPOINTS = (
    "neck",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)
KEYPOINTS = FACE_KEYPOINTS + BODY_KEYPOINTS

LIMBS = (
    ("neck", "nose"),
    ("nose", "left_eye"), ("nose", "right_eye"),
    ("left_eye", "left_ear"), ("right_eye", "right_ear"),
    ("neck", "left_shoulder"), ("neck", "right_shoulder"),
    ("left_shoulder", "left_elbow"), ("right_shoulder", "right_elbow"),
    ("left_elbow", "left_wrist"), ("right_elbow", "right_wrist"),
    ("neck", "left_hip"), ("neck", "right_hip"),
    ("left_hip", "left_knee"), ("right_hip", "right_knee"),
    ("left_knee", "left_ankle"), ("right_knee", "right_ankle"),
)

# Left and right joints share a color so a mirrored skeleton rasterizes to
# the mirrored image.
_KIND_COLORS = {
    "nose": (1.0, 0.0, 0.0),
    "eye": (1.0, 0.0, 1.0),
    "ear": (0.5, 0.0, 1.0),
    "neck": (1.0, 0.5, 0.0),
    "shoulder": (1.0, 1.0, 0.0),
    "elbow": (0.5, 1.0, 0.0),
    "wrist": (0.0, 1.0, 0.0),
    "hip": (0.0, 1.0, 1.0),
    "knee": (0.0, 0.5, 1.0),
    "ankle": (0.0, 0.0, 1.0),
}

DISC_RADIUS = 3.0
LIMB_HALF_WIDTH = 1.0


def _kind(name: str) -> str:
    return name.split("_", 1)[1] if name.startswith(("left_", "right_")) else name


def _swap_side(name: str) -> str:
    if name.startswith("left_"):
        return "right_" + name[5:]
    if name.startswith("right_"):
        return "left_" + name[6:]
    return name


@dataclass(frozen=True)
class PoseSkeleton:
    """Keypoint name -> (x, y, visible) in pixel coordinates."""

    points: dict

    def __post_init__(self):
        unknown = set(self.points) - set(KEYPOINTS)
        if unknown:
            raise SchemaError(f"unknown keypoint names: {sorted(unknown)}")

    def visible(self, name: str) -> bool:
        return name in self.points and bool(self.points[name][2])

    def visible_names(self) -> list[str]:
        return [n for n in KEYPOINTS if self.visible(n)]

    def to_json(self) -> str:
        return json.dumps({k: [float(x), float(y), bool(v)] for k, (x, y, v) in self.points.items()})

    @classmethod
    def from_json(cls, text: str) -> "PoseSkeleton":
        data = json.loads(text)
        return cls({k: (float(v[0]), float(v[1]), bool(v[2])) for k, v in data.items()})


@dataclass(frozen=True)
class VisibilityRules:
    ear: float = 60.0
    near_eye: float = 90.0
    far_eye: float = 120.0
    back_start: float = 135.0
    back_end: float = 225.0

    def masked(self, name: str, azimuth: float) -> bool:
        a = float(azimuth) % 360.0
        if name == "nose":
            return self.back_start <= a <= self.back_end
        if name == "left_ear":
            return self.ear < a < self.back_start
        if name == "right_ear":
            return 360.0 - self.back_start < a < 360.0 - self.ear
        if name == "left_eye":
            return self.near_eye < a < 360.0 - self.far_eye
        if name == "right_eye":
            return self.far_eye < a < 360.0 - self.near_eye
        return False


def trim_skeleton(skeleton: PoseSkeleton, azimuth: float, rules: VisibilityRules = VisibilityRules()) -> PoseSkeleton:
    """Mask facial keypoints that cannot be seen from ``azimuth``; body joints pass through."""
    out = {}
    for name, (x, y, vis) in skeleton.points.items():
        out[name] = (x, y, bool(vis) and not rules.masked(name, azimuth))
    return PoseSkeleton(out)


def mirror_skeleton(skeleton: PoseSkeleton, width: int) -> PoseSkeleton:
    """Horizontal flip of the image plus left/right relabeling."""
    return PoseSkeleton({_swap_side(n): ((width - 1) - x, y, v) for n, (x, y, v) in skeleton.points.items()})


def project_keypoints(keypoints3d: dict, cam: Camera) -> PoseSkeleton:
    """Pinhole (or orthographic) projection of 3D joints; off-image joints are invisible."""
    W = cam.world_to_camera
    cx, cy = cam.center
    out = {}
    for name, p in keypoints3d.items():
        t = W @ (np.asarray(p, dtype=np.float64) - cam.position)
        if cam.mode == ORTHOGRAPHIC:
            x, y = cam.pixel_scale * t[0] + cx, cam.pixel_scale * t[1] + cy
        elif t[2] > cam.near:
            x, y = cam.fx * t[0] / t[2] + cx, cam.fx * t[1] / t[2] + cy
        else:
            out[name] = (0.0, 0.0, False)
            continue
        inside = -0.5 <= x <= cam.width - 0.5 and -0.5 <= y <= cam.height - 0.5
        out[name] = (float(x), float(y), bool(inside))
    return PoseSkeleton(out)


def rasterize_pose(skeleton: PoseSkeleton, w: int, h: int) -> np.ndarray:
    """Draw limbs (2 px wide) then joints (radius 3 discs) on a black (h, w, 3) canvas."""
    img = np.zeros((h, w, 3))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for a, b in LIMBS:
        if not (skeleton.visible(a) and skeleton.visible(b)):
            continue
        ax, ay, _ = skeleton.points[a]
        bx, by, _ = skeleton.points[b]
        ex, ey = bx - ax, by - ay
        length2 = ex * ex + ey * ey
        if length2 > 0:
            s = np.clip(((xs - ax) * ex + (ys - ay) * ey) / length2, 0.0, 1.0)
        else:
            s = np.zeros_like(xs)
        d2 = (xs - ax - s * ex) ** 2 + (ys - ay - s * ey) ** 2
        color = 0.5 * (np.asarray(_KIND_COLORS[_kind(a)]) + np.asarray(_KIND_COLORS[_kind(b)]))
        img[d2 <= LIMB_HALF_WIDTH**2] = color
    # by kind so left/right order never decides an overlap
    for name in sorted(KEYPOINTS, key=lambda n: (list(_KIND_COLORS).index(_kind(n)), n)):
        if not skeleton.visible(name):
            continue
        x, y, _ = skeleton.points[name]
        img[(xs - x) ** 2 + (ys - y) ** 2 <= DISC_RADIUS**2] = _KIND_COLORS[_kind(name)]
    return img
