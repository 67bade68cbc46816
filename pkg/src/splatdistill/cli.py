"""Command-line entry points; run ``python -m splatdistill --help``."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .guidance import AdaptiveSchedule, DistillConfig, MockOracle, PromptSet, distill_step
from .io import read_ply, read_ppm, write_csv, write_ply, write_ppm
from .optim import AdamState, LearningRates
from .pipeline import (
    Inventory, RunConfig, SubjectResolver, run_pipeline, sample_camera, write_views,
)
from .plot import line_plot, side_by_side
from .recon import ReconConfig, TargetView, optimize_stage2
from .schedule import PhaseTable, fit_schedule, t_curve
from .splat.camera import Camera
from .splat.render import render
from .splat.surface import humanoid, init_from_surface
from .synthetic import pose_map, reference_subject
from .vcr import ToyDenoiser, ViewRing, refine_ring, ring_consistency


def _table(path) -> PhaseTable:
    if path is None:
        return PhaseTable()
    data = json.loads(Path(path).read_text())
    return PhaseTable.from_dict(data.get("phases", data))


def cmd_fit_schedule(args) -> None:
    table = _table(args.config)
    params = fit_schedule(table)
    curve = t_curve(params, table, offset=args.offset)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schedule.json").write_text(json.dumps({"params": params.to_dict(), "phases": table.to_dict()}, indent=2))
    w = params.weights()
    write_csv(out / "weights.csv", [{"t": t, "w": float(w[t - 1])} for t in range(1, len(w) + 1)])
    write_csv(out / "curve.csv", [{"i": i + 1, "t": int(v)} for i, v in enumerate(curve)])
    print(f"s1={params.s1:.4f} s2={params.s2:.4f} T={params.T:.4f} objective={params.objective:.3e}")


def cmd_plot_schedule(args) -> None:
    table = _table(args.config)
    params = fit_schedule(table)
    curve = t_curve(params, table)
    t = np.arange(1, 1001)
    left = line_plot(t, params.weights(), vlines=table.boundaries)
    right = line_plot(np.arange(1, len(curve) + 1), curve, color=(0.1, 0.3, 0.8), step=True)
    write_ppm(args.out, side_by_side(left, right))


def _camera(args) -> Camera:
    return Camera(args.azimuth, args.elevation, args.radius, args.size, args.size)


def cmd_render(args) -> None:
    cloud = read_ply(args.ply) if args.ply else reference_subject()
    out = render(cloud, _camera(args), (1.0, 1.0, 1.0), keep_trace=False)
    write_ppm(args.out, out.image)


def cmd_distill(args) -> None:
    cfg = RunConfig()
    cfg.cameras.width = cfg.cameras.height = args.size
    lrs = LearningRates(**{**cfg.guidance.lrs.to_dict(), "decay_steps": max(args.steps, 1)})
    dcfg = DistillConfig(mode=args.mode, gamma=args.gamma, tau=args.tau, lrs=lrs, background=cfg.cameras.background)
    cloud = init_from_surface(humanoid(), args.count, seed=args.seed)
    oracle = MockOracle(resolver=SubjectResolver(reference_subject(), cfg.cameras.background))
    prompts = PromptSet.random(seed=args.seed)
    schedule = None
    if args.mode == "ahds" and args.steps > 0:
        table = PhaseTable().scaled(args.steps)
        schedule = AdaptiveSchedule(t_curve(fit_schedule(table), table), table)
    rng = np.random.default_rng(args.seed)
    opt = AdamState()
    rows = []
    for i in range(1, args.steps + 1):
        cam = sample_camera(rng, cfg.cameras)
        rep = distill_step(cloud, cam, oracle, prompts.conditions(pose=pose_map(cam), view=cam), i, rng, dcfg, opt,
                           schedule)
        rows.append({"step": i, "t": rep.t, "mean_abs_delta": rep.mean_abs_delta, "loss_proxy": rep.loss_proxy})
    if args.out_ply:
        write_ply(args.out_ply, cloud)
    if args.log_csv:
        write_csv(args.log_csv, rows, ["step", "t", "mean_abs_delta", "loss_proxy"])


def _read_views(directory: Path):
    manifest = json.loads((directory / "views.json").read_text())
    ring = ViewRing.from_dict(manifest)
    images, alphas, cams = [], [], []
    for v in manifest["views"]:
        images.append(read_ppm(directory / v["file"]))
        alphas.append(read_ppm(directory / v["alpha_file"])[..., 0] if "alpha_file" in v else None)
        cams.append(Camera.from_dict(v["camera"]) if "camera" in v else None)
    return ring, images, alphas, cams


def cmd_refine(args) -> None:
    src = Path(args.views_dir)
    ring, images, alphas, cams = _read_views(src)
    denoiser = ToyDenoiser(seed=args.seed, steps=args.steps, t_ref=args.t_ref)
    rng = np.random.default_rng(args.seed)
    if args.no_vcr:
        refined = refine_ring(images, ring, denoiser, rng, lambda_self=1.0, mutual=False)
    else:
        refined = refine_ring(images, ring, denoiser, rng, lambda_self=args.lambda_self)
    out = Path(args.out_dir)
    inv = Inventory(out)
    if any(c is None for c in cams):
        cams = [Camera(a) for a in ring.azimuths]
    write_views(inv, ".", ring, cams, refined, alphas if all(a is not None for a in alphas) else None)
    write_csv(out / "consistency.csv", [
        {"stage": "input", "metric": ring_consistency(images, denoiser)},
        {"stage": "refined", "metric": ring_consistency(refined, denoiser)},
    ])


def cmd_reconstruct(args) -> None:
    ring, images, alphas, cams = _read_views(Path(args.views_dir))
    if any(c is None for c in cams):
        raise SystemExit("views.json must record a camera for every view")
    cloud = read_ply(args.in_ply)
    cfg = ReconConfig(lambda_l1=args.lambda_l1, lambda_perc=args.lambda_perc, batch=args.batch, steps=args.steps,
                      lrs=LearningRates(decay_steps=max(args.steps, 1)))
    views = [TargetView(c, im, a) for c, im, a in zip(cams, images, alphas)]
    history = optimize_stage2(cloud, views, cfg, np.random.default_rng(args.seed))
    write_ply(args.out_ply, cloud)
    if args.log_csv:
        write_csv(args.log_csv, history, ["step", "loss", "views"])


def cmd_pipeline(args) -> None:
    cfg = RunConfig.smoke() if args.smoke else RunConfig()
    if args.config:
        base = cfg.to_dict()
        data = json.loads(Path(args.config).read_text())
        for k, v in data.items():
            base[k] = {**base[k], **v} if isinstance(v, dict) and isinstance(base.get(k), dict) else v
        cfg = RunConfig.from_dict(base)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = run_pipeline(cfg, args.out_dir)
    print(json.dumps(manifest["timings"]))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatdistill", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-schedule", help="fit the timestep weight and write params and curves")
    s.add_argument("--config", help="JSON phase table (or a run config with a 'phases' section)")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--offset", type=int, default=0)
    s.set_defaults(func=cmd_fit_schedule)

    s = sub.add_parser("plot-schedule", help="draw the weight and t-i curves to a PPM")
    s.add_argument("--config")
    s.add_argument("--out", default="schedule.ppm")
    s.set_defaults(func=cmd_plot_schedule)

    s = sub.add_parser("render", help="render a PLY (or the reference subject) from one orbit view")
    s.add_argument("--ply")
    s.add_argument("--azimuth", type=float, default=0.0)
    s.add_argument("--elevation", type=float, default=0.0)
    s.add_argument("--radius", type=float, default=3.0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", default="render.ppm")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("distill", help="score-distillation run against the oracle subject")
    s.add_argument("--mode", choices=("sds", "hds", "ahds"), default="ahds")
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--gamma", type=float, default=7.5)
    s.add_argument("--tau", type=int, default=170)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=2000)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out-ply")
    s.add_argument("--log-csv")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("refine", help="refine a ring of view images")
    s.add_argument("--views-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=8)
    s.add_argument("--t-ref", type=int, default=300)
    s.add_argument("--lambda-self", type=float, default=0.55)
    s.add_argument("--no-vcr", action="store_true", help="denoise each view independently")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("reconstruct", help="fit a PLY to a directory of target views")
    s.add_argument("--views-dir", required=True)
    s.add_argument("--in-ply", required=True)
    s.add_argument("--out-ply", required=True)
    s.add_argument("--steps", type=int, default=800)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--lambda-l1", type=float, default=10.0)
    s.add_argument("--lambda-perc", type=float, default=15.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-csv")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("pipeline", help="run both stages and write a manifest")
    s.add_argument("--config", help="JSON overrides, one section per stage")
    s.add_argument("--out-dir")
    s.add_argument("--smoke", action="store_true", help="small desk-scale run")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)
