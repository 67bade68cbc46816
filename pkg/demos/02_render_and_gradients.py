"""Rendering a Gaussian cloud and checking its gradients.

Builds the colored reference subject, renders it around the orbit and
shows that the analytic backward pass agrees with central differences on
a small scene.

Run:  python demos/02_render_and_gradients.py --out demo_out/render
"""

import argparse
from pathlib import Path

import numpy as np

from splatdistill.io import write_ply, write_ppm
from splatdistill.plot import side_by_side
from splatdistill.splat import Camera, GaussianCloud, orbit_cameras, render, render_backward
from splatdistill.synthetic import reference_subject


def loss(cloud, cam, up):
    return float(np.sum(render(cloud, cam, (1, 1, 1), keep_trace=False).image * up))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out/render")
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)

    subject = reference_subject()
    print(f"reference subject: {len(subject)} Gaussians")
    write_ply(out / "subject.ply", subject)
    views = [render(subject, c, (1, 1, 1), keep_trace=False) for c in orbit_cameras([0, 90, 180, 270])]
    write_ppm(out / "orbit.ppm", side_by_side(*(v.image for v in views)))
    print("front/left/back/right coverage:", [f"{v.alpha.mean():.2f}" for v in views])

    # three Gaussians on a 12x12 image are cheap enough to perturb one by one
    rng = np.random.default_rng(0)
    small = GaussianCloud.from_activated(rng.uniform(-0.3, 0.3, (3, 3)), rng.uniform(0.1, 0.3, (3, 3)),
                                         rng.uniform(0.3, 0.9, 3), rng.random((3, 3)), quats=rng.standard_normal((3, 4)))
    cam = Camera(30.0, 10.0, 3.0, 12, 12)
    up = rng.standard_normal((12, 12, 3))
    grads = render_backward(small, render(small, cam, (1, 1, 1)), up).as_dict()
    h = 1e-4
    for name, value in small.params().items():
        idx = (0,) * value.ndim
        plus, minus = small.copy(), small.copy()
        getattr(plus, name)[idx] += h
        getattr(minus, name)[idx] -= h
        fd = (loss(plus, cam, up) - loss(minus, cam, up)) / (2 * h)
        print(f"d/d {name}{list(idx)}: analytic {grads[name][idx]:+.6f}  finite difference {fd:+.6f}")


if __name__ == "__main__":
    main()
