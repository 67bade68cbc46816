"""Differentiable front-to-back splatting.

The forward pass projects every Gaussian with the EWA linearization, sorts
them by camera depth once per view, and alpha-composites per pixel. The
backward pass is the hand-derived adjoint of the same chain, down to the raw
parameters stored on :class:`GaussianCloud`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, StateError
from .camera import ORTHOGRAPHIC, Camera
from .cloud import GaussianCloud, quat_to_rotmat, sigmoid

BLUR = 0.3
EARLY_STOP = 1e-6
TILE_SIZE = 8
# Footprint cutoff for tile binning; anything dimmer than this is skipped.
FOOTPRINT_MIN = 1e-12


@dataclass
class Projection:
    mean2d: np.ndarray  # (N, 2) pixels
    cov2d: np.ndarray  # (N, 2, 2)
    conic: np.ndarray  # (N, 3) entries a, b, c of the inverse 2D covariance
    depth: np.ndarray  # (N,)
    visible: np.ndarray  # (N,) bool
    t_cam: np.ndarray
    J: np.ndarray
    cov_cam: np.ndarray
    R: np.ndarray
    scales: np.ndarray


@dataclass
class _TileTrace:
    idx: np.ndarray  # gaussian indices, front to back
    pix: np.ndarray  # flat pixel indices
    dx: np.ndarray
    dy: np.ndarray
    G: np.ndarray
    a: np.ndarray
    T: np.ndarray
    keep: np.ndarray
    T_end: np.ndarray


@dataclass
class RenderTrace:
    camera: Camera
    background: np.ndarray
    projection: Projection
    tiles: list
    cloud_version: int
    cloud_size: int


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    trace: RenderTrace | None = field(default=None, repr=False)


@dataclass
class GaussianGrads:
    """Gradients with respect to the raw parameters of a cloud."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    mean2d: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "means": self.means,
            "log_scales": self.log_scales,
            "quats": self.quats,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    @classmethod
    def zeros(cls, n: int) -> "GaussianGrads":
        return cls(
            np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n), np.zeros((n, 3)), np.zeros((n, 2))
        )

    def __iadd__(self, other: "GaussianGrads") -> "GaussianGrads":
        for name in ("means", "log_scales", "quats", "opacity_logits", "colors", "mean2d"):
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def scale(self, factor: float) -> "GaussianGrads":
        return GaussianGrads(*(getattr(self, n) * factor for n in
                               ("means", "log_scales", "quats", "opacity_logits", "colors", "mean2d")))


def project(cloud: GaussianCloud, cam: Camera, blur: float = BLUR) -> Projection:
    """Project all Gaussians of ``cloud`` into ``cam``'s image plane."""
    W = cam.world_to_camera
    t = (cloud.means - cam.position) @ W.T
    depth = t[:, 2]
    visible = depth > cam.near
    n = len(cloud)
    cx, cy = cam.center
    J = np.zeros((n, 2, 3))
    if cam.mode == ORTHOGRAPHIC:
        k = cam.pixel_scale
        J[:, 0, 0] = k
        J[:, 1, 1] = k
        mean2d = np.stack([k * t[:, 0] + cx, k * t[:, 1] + cy], axis=1)
    else:
        f = cam.fx
        z = np.where(visible, depth, 1.0)
        J[:, 0, 0] = f / z
        J[:, 0, 2] = -f * t[:, 0] / z**2
        J[:, 1, 1] = f / z
        J[:, 1, 2] = -f * t[:, 1] / z**2
        mean2d = np.stack([f * t[:, 0] / z + cx, f * t[:, 1] / z + cy], axis=1)
    R = quat_to_rotmat(cloud.quats)
    scales = cloud.scales
    M = R * scales[:, None, :]
    cov3 = M @ np.swapaxes(M, 1, 2)
    cov_cam = W @ cov3 @ W.T
    cov2d = J @ cov_cam @ np.swapaxes(J, 1, 2)
    cov2d[:, 0, 0] += blur
    cov2d[:, 1, 1] += blur
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    return Projection(mean2d, cov2d, conic, depth, visible, t, J, cov_cam, R, scales)


def project_gaussian(g, cam: Camera, blur: float = BLUR):
    """Project one :class:`Gaussian3D`.

    Returns ``(mean2d, cov2d, depth)``, or ``None`` when the Gaussian is
    behind the near plane (culled).
    """
    cloud = GaussianCloud.from_activated(g.center, g.scale, min(max(g.opacity, 1e-6), 1 - 1e-6), g.color,
                                         quats=np.asarray(g.rotation)[None])
    proj = project(cloud, cam, blur)
    if not proj.visible[0]:
        return None
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])


def _pixel_grid(cam: Camera):
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    return xs.astype(np.float64).ravel(), ys.astype(np.float64).ravel()


def _tiles(cam: Camera, tile_size):
    if tile_size is None:
        yield np.arange(cam.width * cam.height), (0, cam.width, 0, cam.height)
        return
    for y0 in range(0, cam.height, tile_size):
        for x0 in range(0, cam.width, tile_size):
            x1 = min(x0 + tile_size, cam.width)
            y1 = min(y0 + tile_size, cam.height)
            rows = np.arange(y0, y1)[:, None] * cam.width
            yield (rows + np.arange(x0, x1)[None, :]).ravel(), (x0, x1, y0, y1)


def _transmittance(a: np.ndarray) -> np.ndarray:
    T = np.empty_like(a)
    T[0] = 1.0
    if len(a) > 1:
        np.cumprod(1.0 - a[:-1], axis=0, out=T[1:])
    return T


def render(
    cloud: GaussianCloud,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    *,
    tile_size: int | None = TILE_SIZE,
    early_stop: float = EARLY_STOP,
    blur: float = BLUR,
    keep_trace: bool = True,
) -> RenderOutput:
    """Render ``cloud`` from ``cam``.

    With ``tile_size=None`` every visible Gaussian is evaluated at every
    pixel. With tiles, each tile only evaluates Gaussians whose footprint
    (down to ``FOOTPRINT_MIN``) overlaps it; the depth order is global
    either way. Compositing for a pixel stops once its transmittance drops
    below ``early_stop`` and the remainder goes to the background.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    proj = project(cloud, cam, blur)
    order = np.argsort(proj.depth, kind="stable")
    order = order[proj.visible[order]]
    px, py = _pixel_grid(cam)
    n_pix = cam.width * cam.height
    image = np.empty((n_pix, 3))
    alpha = np.empty(n_pix)
    opac = sigmoid(cloud.opacity_logits)
    u, v = proj.mean2d[:, 0], proj.mean2d[:, 1]
    if tile_size is not None and len(order):
        a_, b_, c_ = proj.cov2d[order, 0, 0], proj.cov2d[order, 0, 1], proj.cov2d[order, 1, 1]
        lam = 0.5 * (a_ + c_) + np.sqrt(0.25 * (a_ - c_) ** 2 + b_ * b_)
        radius = np.sqrt(2.0 * np.log(1.0 / FOOTPRINT_MIN) * lam)
        lo_x, hi_x = u[order] - radius, u[order] + radius
        lo_y, hi_y = v[order] - radius, v[order] + radius
    tiles = []
    for pix, (x0, x1, y0, y1) in _tiles(cam, tile_size):
        if tile_size is None or not len(order):
            idx = order
        else:
            hit = (hi_x >= x0) & (lo_x <= x1 - 1) & (hi_y >= y0) & (lo_y <= y1 - 1)
            idx = order[hit]
        if len(idx) == 0:
            image[pix] = bg
            alpha[pix] = 0.0
            continue
        dx = px[pix][None, :] - u[idx][:, None]
        dy = py[pix][None, :] - v[idx][:, None]
        A = proj.conic[idx, 0][:, None]
        B = proj.conic[idx, 1][:, None]
        C = proj.conic[idx, 2][:, None]
        G = np.exp(-0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy)
        a = opac[idx][:, None] * G
        T = _transmittance(a)
        keep = T >= early_stop
        if not keep.all():
            a = np.where(keep, a, 0.0)
            T = _transmittance(a)
        T_end = T[-1] * (1.0 - a[-1])
        image[pix] = (a * T).T @ cloud.colors[idx] + T_end[:, None] * bg
        alpha[pix] = 1.0 - T_end
        if keep_trace:
            tiles.append(_TileTrace(idx, pix, dx, dy, G, a, T, keep, T_end))
    trace = None
    if keep_trace:
        trace = RenderTrace(cam, bg, proj, tiles, cloud.version, len(cloud))
    return RenderOutput(image.reshape(cam.height, cam.width, 3), alpha.reshape(cam.height, cam.width), trace)


def _quat_backward(quats: np.ndarray, dR: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(quats, axis=1, keepdims=True)
    q = quats / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    dq_hat = np.stack([dw, dx, dy, dz], axis=1)
    # through q_hat = q / |q|
    return (dq_hat - q * np.sum(q * dq_hat, axis=1, keepdims=True)) / norm


def render_backward(cloud: GaussianCloud, output: RenderOutput, upstream_grad: np.ndarray,
                    accumulate_stats: bool = True) -> GaussianGrads:
    """Gradients of ``sum(upstream_grad * output.image)`` w.r.t. raw cloud parameters.

    ``output`` must come from :func:`render` with ``keep_trace=True`` on this
    very cloud state. Screen-space positional gradient norms are added to the
    cloud's densification statistics unless ``accumulate_stats`` is False.
    """
    trace = output.trace
    if trace is None:
        raise StateError("render_backward needs a forward pass rendered with keep_trace=True")
    if trace.cloud_version != cloud.version or trace.cloud_size != len(cloud):
        raise StateError("forward trace is stale: the cloud changed after rendering")
    cam = trace.camera
    g_img = np.asarray(upstream_grad, dtype=np.float64)
    if g_img.shape != (cam.height, cam.width, 3):
        raise ShapeError(f"upstream gradient has shape {g_img.shape}, expected {(cam.height, cam.width, 3)}")
    g_flat = g_img.reshape(-1, 3)
    proj = trace.projection
    n = len(cloud)
    opac = sigmoid(cloud.opacity_logits)
    d_color = np.zeros((n, 3))
    d_alpha = np.zeros(n)
    d_u = np.zeros(n)
    d_v = np.zeros(n)
    d_conic = np.zeros((n, 3))
    bg = trace.background
    for tt in trace.tiles:
        idx = tt.idx
        g = g_flat[tt.pix]  # (P, 3)
        w = tt.a * tt.T
        d_color[idx] += w @ g
        cg = cloud.colors[idx] @ g.T  # (n, P)
        wc = w * cg
        S = np.zeros_like(wc)
        if len(idx) > 1:
            S[:-1] = np.cumsum(wc[:0:-1], axis=0)[::-1]
        S += (tt.T_end * (g @ bg))[None, :]
        one_minus = 1.0 - tt.a
        safe = one_minus > 1e-12
        behind = np.divide(S, one_minus, out=np.zeros_like(S), where=safe)
        gA = np.where(tt.keep, tt.T * cg - behind, 0.0)
        d_alpha[idx] += np.sum(gA * tt.G, axis=1)
        gp = gA * opac[idx][:, None] * tt.G
        A = proj.conic[idx, 0][:, None]
        B = proj.conic[idx, 1][:, None]
        C = proj.conic[idx, 2][:, None]
        # d power / d mean = -(d power / d dx)
        d_u[idx] += np.sum(gp * (A * tt.dx + B * tt.dy), axis=1)
        d_v[idx] += np.sum(gp * (B * tt.dx + C * tt.dy), axis=1)
        d_conic[idx, 0] += np.sum(gp * (-0.5 * tt.dx * tt.dx), axis=1)
        d_conic[idx, 1] += np.sum(gp * (-tt.dx * tt.dy), axis=1)
        d_conic[idx, 2] += np.sum(gp * (-0.5 * tt.dy * tt.dy), axis=1)

    # conic = inv(cov2d); b appears twice in the quadratic form
    Gc = np.empty((n, 2, 2))
    Gc[:, 0, 0] = d_conic[:, 0]
    Gc[:, 0, 1] = Gc[:, 1, 0] = 0.5 * d_conic[:, 1]
    Gc[:, 1, 1] = d_conic[:, 2]
    conic_m = np.empty((n, 2, 2))
    conic_m[:, 0, 0] = proj.conic[:, 0]
    conic_m[:, 0, 1] = conic_m[:, 1, 0] = proj.conic[:, 1]
    conic_m[:, 1, 1] = proj.conic[:, 2]
    d_cov2d = -conic_m @ Gc @ conic_m
    J = proj.J
    d_cov_cam = np.swapaxes(J, 1, 2) @ d_cov2d @ J
    d_J = 2.0 * d_cov2d @ J @ proj.cov_cam
    Wc = cam.world_to_camera
    d_cov3 = Wc.T @ d_cov_cam @ Wc
    R, s = proj.R, proj.scales
    M = R * s[:, None, :]
    d_M = 2.0 * d_cov3 @ M
    d_s = np.einsum("nik,nik->nk", R, d_M)
    d_R = d_M * s[:, None, :]
    d_quats = _quat_backward(cloud.quats, d_R)
    d_log_scales = d_s * s

    d_t = np.zeros((n, 3))
    if cam.mode != ORTHOGRAPHIC:
        f = cam.fx
        tx, ty = proj.t_cam[:, 0], proj.t_cam[:, 1]
        z = np.where(proj.visible, proj.depth, 1.0)
        d_t[:, 0] = d_u * f / z - d_J[:, 0, 2] * f / z**2
        d_t[:, 1] = d_v * f / z - d_J[:, 1, 2] * f / z**2
        d_t[:, 2] = (
            -d_u * f * tx / z**2
            - d_v * f * ty / z**2
            - (d_J[:, 0, 0] + d_J[:, 1, 1]) * f / z**2
            + 2.0 * f * (d_J[:, 0, 2] * tx + d_J[:, 1, 2] * ty) / z**3
        )
    else:
        k = cam.pixel_scale
        d_t[:, 0] = d_u * k
        d_t[:, 1] = d_v * k
    d_means = d_t @ Wc
    invisible = ~proj.visible
    for arr in (d_means, d_log_scales, d_quats):
        arr[invisible] = 0.0
    d_logits = d_alpha * opac * (1.0 - opac)
    d_mean2d = np.stack([d_u, d_v], axis=1)
    if accumulate_stats:
        cloud.grad_accum += np.linalg.norm(d_mean2d, axis=1)
        cloud.grad_count += proj.visible.astype(np.int64)
        cloud.backward_passes += 1
    return GaussianGrads(d_means, d_log_scales, d_quats, d_logits, d_color, d_mean2d)
