"""Two-stage orchestration: score distillation, ring refinement, reconstruction.

Configuration is one JSON document with a section per stage. Every run
writes a manifest listing the config hash, seeds, stage timings and every
file it produced.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParamError
from .guidance import AdaptiveSchedule, DistillConfig, MockOracle, PromptSet, distill_step
from .io import write_csv, write_ply, write_ppm
from .optim import AdamState, LearningRates
from .recon import ReconConfig, TargetView, optimize_stage2
from .schedule import PhaseTable, SearchGrid, fit_schedule, t_curve
from .splat.camera import Camera
from .splat.cloud import GaussianCloud
from .splat.densify import densify_and_prune
from .splat.render import render
from .splat.surface import humanoid, init_from_surface
from .synthetic import pose_map, reference_subject
from .vcr import ToyDenoiser, ViewRing, refine_ring, ring_consistency

HEAD_CENTER = (0.0, 0.76, 0.0)


@dataclass
class SubjectConfig:
    """Initial cloud and the synthetic reference the oracle renders."""

    init_count: int = 2000
    init_seed: int = 0
    reference_count: int = 2000
    reference_seed: int = 1234


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    radius: float = 3.0
    elevation_range: tuple = (-10.0, 20.0)
    head_zoom_prob: float = 0.2
    head_radius: float = 1.2
    background: tuple = (1.0, 1.0, 1.0)


@dataclass
class Stage1Config:
    steps: int = 2400
    densify_start: int = 200
    densify_interval: int = 800
    densify_until: int = 1700
    prune_at: int = 1800
    grad_threshold: float = 2e-4
    opacity_floor: float = 0.005
    scale_ceiling: float = 0.5
    checkpoint_every: int = 100

    def densify_steps(self) -> list[int]:
        if self.densify_interval < 1:
            raise ParamError("densify interval must be positive")
        return [s for s in range(self.densify_start, self.densify_until + 1, self.densify_interval) if s <= self.steps]

    def prune_steps(self) -> list[int]:
        return [self.prune_at] if 0 < self.prune_at <= self.steps else []


@dataclass
class RingConfig:
    n_views: int = 16
    elevation: float = 0.0
    enabled: bool = True
    mutual: bool = True
    lambda_self: float = 0.55
    denoise_steps: int = 8
    t_ref: int = 300
    denoiser_seed: int = 0


def _tuplify(d: dict, keys) -> dict:
    return {k: tuple(v) if k in keys and isinstance(v, list) else v for k, v in d.items()}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    subject: SubjectConfig = field(default_factory=SubjectConfig)
    cameras: CameraConfig = field(default_factory=CameraConfig)
    phases: PhaseTable = field(default_factory=PhaseTable)
    grid: SearchGrid = field(default_factory=SearchGrid)
    guidance: DistillConfig = field(default_factory=DistillConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    ring: RingConfig = field(default_factory=RingConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)

    def to_dict(self) -> dict:
        g = self.guidance
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "subject": asdict(self.subject),
            "cameras": {**asdict(self.cameras), "elevation_range": list(self.cameras.elevation_range),
                        "background": list(self.cameras.background)},
            "phases": self.phases.to_dict(),
            "grid": asdict(self.grid),
            "guidance": {"mode": g.mode, "gamma": g.gamma, "tau": g.tau, "grad_scale": g.grad_scale,
                         "t_uniform": list(g.t_uniform), "lrs": g.lrs.to_dict()},
            "stage1": asdict(self.stage1),
            "ring": asdict(self.ring),
            "recon": {k: v for k, v in self.recon.to_dict().items() if k != "background"},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        if "seed" in data:
            cfg.seed = int(data["seed"])
        if "output_dir" in data:
            cfg.output_dir = data["output_dir"]
        if "subject" in data:
            cfg.subject = SubjectConfig(**data["subject"])
        if "cameras" in data:
            cfg.cameras = CameraConfig(**_tuplify(data["cameras"], ("elevation_range", "background")))
        if "phases" in data:
            cfg.phases = PhaseTable.from_dict(data["phases"])
        if "grid" in data:
            cfg.grid = SearchGrid(**data["grid"])
        if "guidance" in data:
            g = dict(data["guidance"])
            if "lrs" in g:
                g["lrs"] = LearningRates(**g["lrs"])
            cfg.guidance = DistillConfig(**_tuplify(g, ("t_uniform",)))
        if "stage1" in data:
            cfg.stage1 = Stage1Config(**data["stage1"])
        if "ring" in data:
            cfg.ring = RingConfig(**data["ring"])
        if "recon" in data:
            cfg.recon = ReconConfig.from_dict(data["recon"])
        cfg.guidance.background = cfg.cameras.background
        cfg.recon.background = cfg.cameras.background
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def smoke(cls, output_dir: str = "runs/smoke") -> "RunConfig":
        """500 Gaussians, 64x64, 300 distillation plus 100 reconstruction steps."""
        cfg = cls(output_dir=output_dir)
        cfg.subject = SubjectConfig(init_count=500, reference_count=1000)
        cfg.stage1 = Stage1Config(steps=300, densify_start=200, densify_interval=800, densify_until=1700,
                                  prune_at=280, checkpoint_every=50)
        cfg.phases = cfg.phases.scaled(300)
        cfg.recon = ReconConfig(steps=100, lrs=LearningRates(decay_steps=100))
        cfg.guidance.lrs.decay_steps = 300
        return cfg


def sample_camera(rng: np.random.Generator, cc: CameraConfig) -> Camera:
    """Random orbit view; a share of draws are close-ups of the head."""
    az = float(rng.uniform(0.0, 360.0))
    el = float(rng.uniform(*cc.elevation_range))
    if rng.random() < cc.head_zoom_prob:
        return Camera(az, el, cc.head_radius, cc.width, cc.height, target=HEAD_CENTER)
    return Camera(az, el, cc.radius, cc.width, cc.height)


class SubjectResolver:
    """Oracle fallback that renders the reference subject from the condition's camera."""

    def __init__(self, subject: GaussianCloud, background):
        self.subject = subject
        self.background = background
        self._cache: dict = {}

    def __call__(self, cond) -> np.ndarray:
        if cond.view is None:
            raise ParamError("condition carries no camera to render the reference from")
        key = cond.view
        if key not in self._cache:
            self._cache[key] = render(self.subject, cond.view, self.background, keep_trace=False).image
            if len(self._cache) > 64:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]


class Inventory:
    """Tracks every file a run writes so the manifest can list it."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def describe(self) -> list[dict]:
        out = []
        for rel in sorted(self.files):
            p = self.root / rel
            if p.exists():
                out.append({"path": rel, "bytes": p.stat().st_size,
                            "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        return out


@dataclass
class Stage1Result:
    cloud: GaussianCloud
    log: list
    densify_reports: list
    schedule: AdaptiveSchedule | None


def run_stage1(cfg: RunConfig, inventory: Inventory | None = None, oracle=None, prompts: PromptSet | None = None,
               cloud: GaussianCloud | None = None) -> Stage1Result:
    """Score-distillation loop with the densify/prune schedule.

    If a step fails the last good cloud is written as the stage-1
    checkpoint before the error propagates.
    """
    s1 = cfg.stage1
    cc = cfg.cameras
    if cloud is None:
        cloud = init_from_surface(humanoid(), cfg.subject.init_count, seed=cfg.subject.init_seed)
    prompts = prompts or PromptSet.random(seed=cfg.seed)
    if oracle is None:
        subject = reference_subject(cfg.subject.reference_count, cfg.subject.reference_seed)
        oracle = MockOracle(resolver=SubjectResolver(subject, cc.background))
    dcfg = copy.copy(cfg.guidance)
    dcfg.background = cc.background
    schedule = None
    if dcfg.mode == "ahds" and s1.steps > 0:
        table = cfg.phases if cfg.phases.total_steps == s1.steps else cfg.phases.scaled(s1.steps)
        schedule = AdaptiveSchedule(t_curve(fit_schedule(table, cfg.grid), table), table)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamState()
    densify_at = set(s1.densify_steps())
    prune_at = set(s1.prune_steps())
    log, reports = [], []
    last_good = cloud.copy()
    ckpt = inventory.path("stage1/checkpoint.ply") if inventory else None
    try:
        for i in range(1, s1.steps + 1):
            cam = sample_camera(rng, cc)
            conds = prompts.conditions(pose=pose_map(cam), view=cam)
            rep = distill_step(cloud, cam, oracle, conds, i, rng, dcfg, opt, schedule)
            event = ""
            if i in densify_at or i in prune_at:
                mode = "both" if i in densify_at else "prune_only"
                r = densify_and_prune(cloud, s1.grad_threshold, s1.opacity_floor, s1.scale_ceiling, mode=mode, step=i)
                reports.append({"step": i, "mode": mode, **asdict(r)})
                opt.reset_moments()
                event = mode
            log.append({"step": i, "azimuth": round(cam.azimuth, 4), "elevation": round(cam.elevation, 4),
                        "radius": cam.radius, "t": rep.t, "mean_abs_delta": rep.mean_abs_delta,
                        "loss_proxy": rep.loss_proxy, "n_gaussians": len(cloud), "event": event})
            last_good = cloud.copy()
            if ckpt is not None and s1.checkpoint_every and i % s1.checkpoint_every == 0:
                write_ply(ckpt, cloud)
    except Exception:
        if ckpt is not None:
            write_ply(ckpt, last_good)
        raise
    if inventory is not None:
        write_ply(ckpt, cloud)
        write_ply(inventory.path("stage1/cloud.ply"), cloud)
        write_csv(inventory.path("stage1/log.csv"), log,
                  ["step", "azimuth", "elevation", "radius", "t", "mean_abs_delta", "loss_proxy", "n_gaussians", "event"])
        if reports:
            write_csv(inventory.path("stage1/densify.csv"), reports)
    return Stage1Result(cloud, log, reports, schedule)


def ring_cameras(ring: ViewRing, cfg: RunConfig) -> list[Camera]:
    cc = cfg.cameras
    return [Camera(a, cfg.ring.elevation, cc.radius, cc.width, cc.height) for a in ring.azimuths]


def write_views(inventory: Inventory, prefix: str, ring: ViewRing, cams: list, images: list,
                alphas: list | None = None) -> None:
    """Per-view PPMs plus a ``views.json`` manifest the CLI can read back."""
    entries = []
    for k, (cam, img) in enumerate(zip(cams, images)):
        name = f"view_{k:02d}.ppm"
        write_ppm(inventory.path(f"{prefix}/{name}"), img)
        entry = {"azimuth": ring.azimuths[k], "role": ring.roles[k], "file": name, "camera": cam.to_dict()}
        if alphas is not None:
            aname = f"alpha_{k:02d}.ppm"
            write_ppm(inventory.path(f"{prefix}/{aname}"), alphas[k])
            entry["alpha_file"] = aname
        entries.append(entry)
    inventory.path(f"{prefix}/views.json").write_text(json.dumps({"views": entries}, indent=2))


@dataclass
class Stage2Result:
    cloud: GaussianCloud
    history: list
    before: list
    refined: list
    consistency: dict


def run_stage2(cfg: RunConfig, cloud: GaussianCloud, inventory: Inventory | None = None) -> Stage2Result:
    """Render the ring, refine it, then reconstruct the cloud against the refined views."""
    ring = ViewRing.default(cfg.ring.n_views)
    cams = ring_cameras(ring, cfg)
    bg = cfg.cameras.background
    outs = [render(cloud, c, bg, keep_trace=False) for c in cams]
    before = [o.image for o in outs]
    alphas = [o.alpha for o in outs]
    rng = np.random.default_rng([cfg.seed, 2])
    rc = cfg.ring
    denoiser = ToyDenoiser(seed=rc.denoiser_seed, steps=rc.denoise_steps, t_ref=rc.t_ref)
    consistency = {"before": ring_consistency(before, denoiser)}
    if rc.enabled:
        refined = refine_ring(before, ring, denoiser, rng, lambda_self=rc.lambda_self, mutual=rc.mutual)
        consistency["refined"] = ring_consistency(refined, denoiser)
    else:
        refined = [b.copy() for b in before]
    views = [TargetView(c, r, a) for c, r, a in zip(cams, refined, alphas)]
    work = cloud.copy()
    history = optimize_stage2(work, views, cfg.recon, rng)
    if inventory is not None:
        write_views(inventory, "stage2/before", ring, cams, before, alphas)
        write_views(inventory, "stage2/refined", ring, cams, refined, alphas)
        after = [render(work, c, bg, keep_trace=False).image for c in cams]
        write_views(inventory, "stage2/after", ring, cams, after)
        write_csv(inventory.path("stage2/loss.csv"), history, ["step", "loss", "views"])
        write_csv(inventory.path("stage2/consistency.csv"), [{"stage": k, "metric": v} for k, v in consistency.items()])
        write_ply(inventory.path("stage2/cloud.ply"), work)
    return Stage2Result(work, history, before, refined, consistency)


def run_pipeline(cfg: RunConfig, output_dir=None) -> dict:
    """Both stages end to end; returns the manifest that is also written to disk."""
    root = Path(output_dir or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    inv = Inventory(root)
    inv.path("config.json").write_text(cfg.to_json())
    timings = {}
    t0 = time.perf_counter()
    s1 = run_stage1(cfg, inv)
    timings["stage1_s"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    s2 = run_stage2(cfg, s1.cloud, inv)
    timings["stage2_s"] = time.perf_counter() - t1
    timings["total_s"] = time.perf_counter() - t0
    manifest = {
        "config_hash": cfg.config_hash(),
        "seeds": {"run": cfg.seed, "init": cfg.subject.init_seed, "reference": cfg.subject.reference_seed,
                  "denoiser": cfg.ring.denoiser_seed},
        "timings": {k: round(v, 3) for k, v in timings.items()},
        "stage1": {"final_gaussians": len(s1.cloud), "densify": s1.densify_reports},
        "stage2": {"initial_loss": s2.history[0]["loss"] if s2.history else None,
                   "final_loss": s2.history[-1]["loss"] if s2.history else None,
                   "consistency": s2.consistency},
        "outputs": inv.describe(),
    }
    manifest["outputs"].append({"path": "manifest.json"})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o).__name__)

