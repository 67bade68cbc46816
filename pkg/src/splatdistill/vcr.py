"""Multi-view refinement with shared attention features.

Views on an azimuth ring are denoised in three passes per step. Main views
attend to themselves and cache their keys and values. Key views also attend
to their nearest main view. Intermediate views blend their own attention
with attention into their two nearest anchor views, weighted by how close
they sit to each one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParamError, ShapeError, TopologyError
from .guidance import DEFAULT_SCHEDULE, NoiseSchedule, add_noise

MAIN_AZIMUTHS = (0.0, 90.0, 180.0, 270.0)
KEY_AZIMUTHS = (45.0, 135.0, 225.0, 315.0)
LAMBDA_SELF = 0.55
ROLES = ("main", "key", "intermediate")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attn(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention, one head."""
    Q, K, V = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (Q, K, V))
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"{K.shape[0]} keys but {V.shape[0]} values")
    d = Q.shape[1]
    return _softmax_rows(Q @ K.T / math.sqrt(d)) @ V


def mutual_attention(Q_p, K_p, V_p, K_m, V_m) -> np.ndarray:
    """Attention over the view's own keys/values stacked with a reference view's."""
    K_p, K_m, V_p, V_m = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (K_p, K_m, V_p, V_m))
    if K_p.shape[1] != K_m.shape[1] or V_p.shape[1] != V_m.shape[1]:
        raise ShapeError("reference view features have a different width")
    return attn(Q_p, np.vstack([K_p, K_m]), np.vstack([V_p, V_m]))


def arc(a: float, b: float) -> float:
    """Shortest angular distance in degrees."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def relative_distance(phi: float, phi_left: float, phi_right: float) -> tuple[float, float]:
    """Blend weights ``(eta_l, eta_r)`` of a view between its two anchors.

    The closer anchor gets the larger weight. A view sitting on an anchor
    gets all of that anchor's weight.
    """
    d_l, d_r = arc(phi, phi_left), arc(phi, phi_right)
    span = arc(phi_left, phi_right)
    if d_l == 0.0 or span == 0.0:
        return (1.0, 0.0) if d_l <= d_r else (0.0, 1.0)
    if d_r == 0.0:
        return 0.0, 1.0
    eta_l = 1.0 - min(d_l / span, 1.0)
    return eta_l, 1.0 - eta_l


def fused_attention(Q_i, K_i, V_i, K_pl, V_pl, K_pr, V_pr, eta_l: float, eta_r: float,
                    lambda_self: float = LAMBDA_SELF) -> np.ndarray:
    """Self-attention blended with attention into the left and right anchor views."""
    if not 0.0 <= lambda_self <= 1.0:
        raise ParamError(f"lambda_self must lie in [0, 1], got {lambda_self}")
    if min(eta_l, eta_r) < 0.0 or abs(eta_l + eta_r - 1.0) > 1e-9:
        raise ParamError(f"eta weights must be non-negative and sum to 1, got ({eta_l}, {eta_r})")
    o_self = attn(Q_i, K_i, V_i)
    if lambda_self == 1.0:
        return o_self
    o_nb = eta_l * attn(Q_i, K_pl, V_pl) + eta_r * attn(Q_i, K_pr, V_pr)
    return lambda_self * o_self + (1.0 - lambda_self) * o_nb


@dataclass
class ViewRing:
    """Views ordered by azimuth, each tagged main, key or intermediate."""

    azimuths: tuple
    roles: tuple
    features: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.azimuths = tuple(float(a) for a in self.azimuths)
        self.roles = tuple(self.roles)
        self.validate()

    @classmethod
    def default(cls, n_views: int = 16) -> "ViewRing":
        """Evenly spaced ring holding the four main views and four key views."""
        if n_views % 8:
            raise TopologyError("the default ring needs a multiple of 8 views")
        az = tuple(360.0 * k / n_views for k in range(n_views))
        roles = tuple("main" if a in MAIN_AZIMUTHS else "key" if a in KEY_AZIMUTHS else "intermediate" for a in az)
        return cls(az, roles)

    def validate(self) -> None:
        a = self.azimuths
        if len(a) != len(self.roles):
            raise TopologyError("one role per view is required")
        if any(r not in ROLES for r in self.roles):
            raise TopologyError(f"roles must be among {ROLES}")
        if any(x < 0.0 or x >= 360.0 for x in a) or any(x >= y for x, y in zip(a, a[1:])):
            raise TopologyError("azimuths must increase strictly within [0, 360)")
        mains = tuple(x for x, r in zip(a, self.roles) if r == "main")
        if mains != MAIN_AZIMUTHS:
            raise TopologyError(f"main views must sit at {MAIN_AZIMUTHS}, got {mains}")

    def __len__(self):
        return len(self.azimuths)

    def indices(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def nearest_main(self, i: int) -> int:
        mains = self.indices("main")
        # ties go to the smaller azimuth
        return min(mains, key=lambda j: (arc(self.azimuths[i], self.azimuths[j]), self.azimuths[j]))

    def anchors(self, i: int) -> tuple[int, int]:
        """Nearest main-or-key view walking down and up the ring from view ``i``."""
        n = len(self)
        left = next((i - k) % n for k in range(1, n) if self.roles[(i - k) % n] != "intermediate")
        right = next((i + k) % n for k in range(1, n) if self.roles[(i + k) % n] != "intermediate")
        return left, right

    def to_dict(self) -> dict:
        return {"views": [{"azimuth": a, "role": r} for a, r in zip(self.azimuths, self.roles)]}

    @classmethod
    def from_dict(cls, data: dict) -> "ViewRing":
        views = data["views"]
        return cls(tuple(v["azimuth"] for v in views), tuple(v["role"] for v in views))


GRID = 8
TOKEN_DIM = 32


@dataclass
class ToyDenoiser:
    """Patch-token denoiser with a single attention site.

    Each image is cut into an 8x8 grid of patches. An orthonormal projection
    maps every patch to a token, the attention site mixes tokens, and the
    transposed projection writes the mixed tokens back. The denoised estimate
    keeps a share of the view's own tokens equal to the signal fraction at
    the current noise level and takes the rest from the attention output.
    """

    seed: int = 0
    steps: int = 8
    t_ref: int = 300
    dim: int = TOKEN_DIM
    temperature: float = 4.0
    schedule: NoiseSchedule = DEFAULT_SCHEDULE
    _proj: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.steps < 1:
            raise ParamError("need at least one denoising step")
        if not 1 <= self.t_ref <= self.schedule.steps:
            raise ParamError(f"t_ref must lie in [1, {self.schedule.steps}]")
        rng = np.random.default_rng(self.seed)
        self.Wq = np.linalg.qr(rng.standard_normal((self.dim, self.dim)))[0] * math.sqrt(self.temperature)
        self.Wk = np.linalg.qr(rng.standard_normal((self.dim, self.dim)))[0] * math.sqrt(self.temperature)

    def timesteps(self) -> list[int]:
        return [max(1, int(round(self.t_ref * (self.steps - k) / self.steps))) for k in range(self.steps)]

    def projection(self, patch_dim: int) -> np.ndarray:
        if patch_dim < self.dim:
            raise ShapeError(f"patches of {patch_dim} values are smaller than the token width {self.dim}")
        if patch_dim not in self._proj:
            rng = np.random.default_rng([self.seed, patch_dim])
            self._proj[patch_dim] = np.linalg.qr(rng.standard_normal((patch_dim, self.dim)))[0]
        return self._proj[patch_dim]

    def patchify(self, img: np.ndarray) -> np.ndarray:
        h, w, c = img.shape
        if h % GRID or w % GRID:
            raise ShapeError(f"image size {h}x{w} is not divisible by the {GRID}x{GRID} patch grid")
        ph, pw = h // GRID, w // GRID
        return img.reshape(GRID, ph, GRID, pw, c).transpose(0, 2, 1, 3, 4).reshape(GRID * GRID, ph * pw * c)

    def unpatchify(self, patches: np.ndarray, shape) -> np.ndarray:
        h, w, c = shape
        ph, pw = h // GRID, w // GRID
        return patches.reshape(GRID, GRID, ph, pw, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)

    def tokens(self, img: np.ndarray) -> np.ndarray:
        p = self.patchify(img)
        return p @ self.projection(p.shape[1])

    def features(self, x_t: np.ndarray, t: int) -> dict:
        """Tokens and attention inputs of a noisy image at timestep ``t``."""
        scaled = x_t / math.sqrt(self.schedule.alpha_bar(t))
        patches = self.patchify(scaled)
        W = self.projection(patches.shape[1])
        u = patches @ W
        return {"patches": patches, "u": u, "Q": u @ self.Wq, "K": u @ self.Wk, "V": u}

    def step(self, x_t: np.ndarray, t: int, t_next: int, feats: dict, context: np.ndarray) -> np.ndarray:
        """DDIM update from ``t`` to ``t_next`` (0 means the clean estimate)."""
        ab = self.schedule.alpha_bar(t)
        W = self.projection(feats["patches"].shape[1])
        u = feats["u"]
        z = ab * u + (1.0 - ab) * context
        x0_patches = feats["patches"] + (z - u) @ W.T
        x0 = self.unpatchify(x0_patches, x_t.shape)
        if t_next == 0:
            return x0
        eps = (x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
        ab_next = self.schedule.alpha_bar(t_next)
        return math.sqrt(ab_next) * x0 + math.sqrt(1.0 - ab_next) * eps

    def denoise(self, img: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Independent single-view refinement (self-attention only)."""
        ts = self.timesteps()
        x = add_noise(img, ts[0], eps, self.schedule)
        for k, t in enumerate(ts):
            t_next = ts[k + 1] if k + 1 < len(ts) else 0
            f = self.features(x, t)
            x = self.step(x, t, t_next, f, attn(f["Q"], f["K"], f["V"]))
        return np.clip(x, 0.0, 1.0)


def refine_ring(
    images: list,
    ring: ViewRing,
    denoiser: ToyDenoiser,
    rng: np.random.Generator,
    lambda_self: float = LAMBDA_SELF,
    mutual: bool = True,
) -> list[np.ndarray]:
    """Jointly denoise every ring view, sharing attention features across views.

    All views start from the same noise draw. ``lambda_self=1`` together
    with ``mutual=False`` turns off every cross-view exchange.
    """
    ring.validate()
    if len(images) != len(ring):
        raise TopologyError(f"{len(images)} images for {len(ring)} ring views")
    shape = np.shape(images[0])
    if any(np.shape(im) != shape for im in images):
        raise ShapeError("all views must share one image shape")
    eps = rng.standard_normal(shape)
    ts = denoiser.timesteps()
    xs = [add_noise(np.asarray(im, dtype=np.float64), ts[0], eps, denoiser.schedule) for im in images]
    mains, keys, inters = ring.indices("main"), ring.indices("key"), ring.indices("intermediate")
    main_of = {i: ring.nearest_main(i) for i in keys}
    anchors = {i: ring.anchors(i) for i in inters}
    etas = {i: relative_distance(ring.azimuths[i], ring.azimuths[l], ring.azimuths[r])
            for i, (l, r) in anchors.items()}
    for k, t in enumerate(ts):
        t_next = ts[k + 1] if k + 1 < len(ts) else 0
        feats = {}
        new = list(xs)
        for i in mains:
            f = feats[i] = denoiser.features(xs[i], t)
            new[i] = denoiser.step(xs[i], t, t_next, f, attn(f["Q"], f["K"], f["V"]))
        for i in keys:
            f = feats[i] = denoiser.features(xs[i], t)
            if mutual:
                m = feats[main_of[i]]
                ctx = mutual_attention(f["Q"], f["K"], f["V"], m["K"], m["V"])
            else:
                ctx = attn(f["Q"], f["K"], f["V"])
            new[i] = denoiser.step(xs[i], t, t_next, f, ctx)
        for i in inters:
            f = feats[i] = denoiser.features(xs[i], t)
            l, r = anchors[i]
            fl, fr = feats[l], feats[r]
            ctx = fused_attention(f["Q"], f["K"], f["V"], fl["K"], fl["V"], fr["K"], fr["V"], *etas[i], lambda_self)
            new[i] = denoiser.step(xs[i], t, t_next, f, ctx)
        ring.features = feats
        xs = new
    return [np.clip(x, 0.0, 1.0) for x in xs]


def ring_consistency(images: list, denoiser: ToyDenoiser) -> float:
    """Mean token-space distance between neighboring ring views (wrapping around)."""
    toks = [denoiser.tokens(np.asarray(im, dtype=np.float64)) for im in images]
    n = len(toks)
    return float(np.mean([np.linalg.norm(toks[i] - toks[(i + 1) % n], axis=1).mean() for i in range(n)]))
