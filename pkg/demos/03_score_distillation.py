"""Score distillation against a closed-form noise predictor.

No diffusion network is involved. Every condition points at a render of the
reference subject, and the predictor returns exactly the noise that would
turn that render into the noisy input. Distillation should then pull the
cloud toward the reference. The run compares plain uniform-timestep
identity guidance with the scheduled variant at the same step count.

Run:  python demos/03_score_distillation.py --steps 150 --size 32
"""

import argparse
from pathlib import Path

import numpy as np

from splatdistill.guidance import AdaptiveSchedule, DistillConfig, distill_step
from splatdistill.io import write_ppm
from splatdistill.optim import AdamState
from splatdistill.plot import side_by_side
from splatdistill.schedule import PhaseTable, fit_schedule, t_curve
from splatdistill.splat import humanoid, init_from_surface, orbit_cameras, render
from splatdistill.synthetic import build_oracle, psnr, reference_subject


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--count", type=int, default=800)
    ap.add_argument("--out", default="demo_out/distill")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cams = orbit_cameras([0, 90, 180, 270], width=args.size, height=args.size)
    fx = build_oracle(reference_subject(), cams)

    def mean_psnr(cloud):
        return np.mean([psnr(render(cloud, c, (1, 1, 1), keep_trace=False).image, t)
                        for c, t in zip(cams, fx.targets)])

    finals = {}
    for mode in ("hds", "ahds"):
        cloud = init_from_surface(humanoid(), args.count, seed=0)
        sched = None
        if mode == "ahds":
            table = PhaseTable().scaled(args.steps)
            sched = AdaptiveSchedule(t_curve(fit_schedule(table), table), table)
        rng, opt, cfg = np.random.default_rng(0), AdamState(), DistillConfig(mode=mode)
        print(f"{mode}: start {mean_psnr(cloud):.2f} dB")
        for i in range(1, args.steps + 1):
            k = int(rng.integers(len(cams)))
            rep = distill_step(cloud, cams[k], fx.oracle, fx.conditions[k], i, rng, cfg, opt, sched)
            if i % max(args.steps // 5, 1) == 0:
                print(f"  step {i:4d}  t={rep.t:3d}  |delta|={rep.mean_abs_delta:.4f}  psnr {mean_psnr(cloud):.2f} dB")
        finals[mode] = cloud
        renders = [render(cloud, c, (1, 1, 1), keep_trace=False).image for c in cams]
        write_ppm(out / f"{mode}.ppm", side_by_side(*renders))

    # scheduled runs spend their first steps at large t, where identical targets
    # give a zero rectifying term, then catch up once t drops below the threshold
    print("final:", {m: f"{mean_psnr(c):.2f} dB" for m, c in finals.items()})
    write_ppm(out / "targets.ppm", side_by_side(*fx.targets))


if __name__ == "__main__":
    main()
