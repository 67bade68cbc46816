"""Orbit cameras.

World frame: +y up, the subject faces +z. Azimuth 0 puts the camera on the +z
axis looking at the subject's front; azimuth 90 puts it on +x. Camera space
follows the usual pinhole convention (x right, y down, z forward), and pixel
coordinates address pixel centers, so pixel ``(row, col)`` sits at
``(u, v) = (col, row)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ParamError

PERSPECTIVE = "perspective"
ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class Camera:
    azimuth: float = 0.0
    elevation: float = 0.0
    radius: float = 3.0
    width: int = 64
    height: int = 64
    mode: str = PERSPECTIVE
    focal: float | None = None
    ortho_scale: float | None = None
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    near: float = 0.01

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParamError(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.radius <= 0:
            raise ParamError(f"orbit radius must be positive, got {self.radius}")
        if self.mode not in (PERSPECTIVE, ORTHOGRAPHIC):
            raise ParamError(f"unknown projection mode {self.mode!r}")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)

    @property
    def fx(self) -> float:
        """Focal length in pixels; defaults to a 40 degree horizontal field of view."""
        if self.focal is not None:
            return float(self.focal)
        return 0.5 * self.width / math.tan(math.radians(20.0))

    @property
    def pixel_scale(self) -> float:
        """Pixels per world unit for orthographic projection."""
        if self.ortho_scale is not None:
            return float(self.ortho_scale)
        return self.width / 2.2

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.width - 1), 0.5 * (self.height - 1))

    @property
    def position(self) -> np.ndarray:
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        offset = self.radius * np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
        )
        return np.asarray(self.target, dtype=np.float64) + offset

    @property
    def world_to_camera(self) -> np.ndarray:
        """3x3 rotation whose rows are the camera x, y, z axes in world coordinates."""
        forward = np.asarray(self.target, dtype=np.float64) - self.position
        forward /= np.linalg.norm(forward)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            # looking straight up or down
            right = np.array([1.0, 0.0, 0.0])
        else:
            right /= norm
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    def with_size(self, width: int, height: int) -> "Camera":
        """Same pose, different resolution; focal scales with width."""
        focal = None if self.focal is None else self.focal * width / self.width
        ortho = None if self.ortho_scale is None else self.ortho_scale * width / self.width
        return replace(self, width=width, height=height, focal=focal, ortho_scale=ortho)

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "radius": self.radius,
            "width": self.width,
            "height": self.height,
            "mode": self.mode,
            "focal": self.focal,
            "ortho_scale": self.ortho_scale,
            "target": list(self.target),
            "near": self.near,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        data = dict(data)
        if "target" in data:
            data["target"] = tuple(float(v) for v in data["target"])
        return cls(**data)


def orbit_cameras(azimuths, elevation=0.0, radius=3.0, width=64, height=64, **kwargs) -> list[Camera]:
    return [
        Camera(azimuth=a, elevation=elevation, radius=radius, width=width, height=height, **kwargs)
        for a in azimuths
    ]
