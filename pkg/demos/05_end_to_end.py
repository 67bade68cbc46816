"""Both stages end to end at smoke scale.

Stage 1 distills a 500-Gaussian cloud for 300 scheduled steps with densify
and prune events. Stage 2 renders a 16-view ring, refines it and fits the
cloud to the refined views for 100 steps. Everything lands in one
directory with a manifest that hashes the config and lists each file.

Run:  python demos/05_end_to_end.py --out demo_out/pipeline
"""

import argparse
import json
from pathlib import Path

from splatdistill.io import read_csv
from splatdistill.pipeline import RunConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig.smoke(args.out)
    cfg.seed = args.seed
    manifest = run_pipeline(cfg)
    root = Path(args.out)

    log = read_csv(root / "stage1/log.csv")
    for row in log:
        if row["event"]:
            print(f"step {row['step']}: {row['event']}, {row['n_gaussians']} Gaussians afterwards")
    print("stage 1 last rows:")
    for row in log[-3:]:
        print(f"  step {row['step']} t={row['t']} |delta|={float(row['mean_abs_delta']):.4f}")

    s2 = manifest["stage2"]
    print(f"stage 2 loss {s2['initial_loss']:.4f} -> {s2['final_loss']:.4f}")
    print("ring consistency:", json.dumps({k: round(v, 4) for k, v in s2["consistency"].items()}))
    print("timings:", manifest["timings"])
    print(f"{len(manifest['outputs'])} files, config hash {manifest['config_hash'][:12]}")


if __name__ == "__main__":
    main()
