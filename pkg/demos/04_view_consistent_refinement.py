"""Refining a ring of views so neighbors agree.

Sixteen views share a layout but carry independent detail noise. Each view
is partially noised and denoised by a toy patch-token model. The four main
views attend to themselves. Key views also attend to their nearest main
view. Every other view blends attention into its two anchors by angular
distance. Adjacent views should end up closer in token space than with
independent denoising from the same noise.

Run:  python demos/04_view_consistent_refinement.py --trials 5
"""

import argparse
from pathlib import Path

import numpy as np

from splatdistill.io import write_ppm
from splatdistill.plot import side_by_side
from splatdistill.synthetic import jittered_views
from splatdistill.vcr import ToyDenoiser, ViewRing, refine_ring, relative_distance, ring_consistency


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--out", default="demo_out/refine")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ring, den = ViewRing.default(), ToyDenoiser()
    for i in range(len(ring)):
        line = f"view {i:2d} at {ring.azimuths[i]:5.1f} deg: {ring.roles[i]}"
        if ring.roles[i] == "key":
            line += f", borrows from main view at {ring.azimuths[ring.nearest_main(i)]:.0f}"
        elif ring.roles[i] == "intermediate":
            l, r = ring.anchors(i)
            eta = relative_distance(ring.azimuths[i], ring.azimuths[l], ring.azimuths[r])
            line += f", blends {ring.azimuths[l]:.0f}/{ring.azimuths[r]:.0f} at {eta[0]:.2f}/{eta[1]:.2f}"
        print(line)

    for s in range(args.trials):
        imgs = jittered_views(np.random.default_rng(s))
        on = refine_ring(imgs, ring, den, np.random.default_rng(100 + s))
        off = refine_ring(imgs, ring, den, np.random.default_rng(100 + s), lambda_self=1.0, mutual=False)
        print(f"trial {s}: input {ring_consistency(imgs, den):.3f}  independent {ring_consistency(off, den):.3f}"
              f"  shared attention {ring_consistency(on, den):.3f}")
        if s == 0:
            write_ppm(out / "independent.ppm", side_by_side(*off[:6]))
            write_ppm(out / "shared.ppm", side_by_side(*on[:6]))


if __name__ == "__main__":
    main()
