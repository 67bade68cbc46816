from .camera import Camera, ORTHOGRAPHIC, PERSPECTIVE, orbit_cameras
from .cloud import Gaussian3D, GaussianCloud, quat_to_rotmat, sigmoid, logit
from .densify import DensifyReport, densify_and_prune
from .render import (
    GaussianGrads,
    Projection,
    RenderOutput,
    project,
    project_gaussian,
    render,
    render_backward,
)
from .surface import (
    Capsule,
    CapsuleBody,
    TriangleMesh,
    humanoid,
    humanoid_keypoints,
    init_from_surface,
    sample_capsules,
    sample_mesh,
)

__all__ = [
    "Camera", "ORTHOGRAPHIC", "PERSPECTIVE", "orbit_cameras",
    "Gaussian3D", "GaussianCloud", "quat_to_rotmat", "sigmoid", "logit",
    "DensifyReport", "densify_and_prune",
    "GaussianGrads", "Projection", "RenderOutput", "project", "project_gaussian", "render", "render_backward",
    "Capsule", "CapsuleBody", "TriangleMesh", "humanoid", "humanoid_keypoints", "init_from_surface",
    "sample_capsules", "sample_mesh",
]
