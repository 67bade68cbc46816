"""Fitting the timestep schedule that drives stage-1 distillation.

The training budget is split across three timestep ranges: coarse shape
at large t, a short hand-over, then fine detail at small t. A two-sided bell
over t is fitted so its probability mass in each range matches that range's
share of the budget. Inverting the bell's upper tail then gives a
non-increasing timestep ceiling per training step.

Run:  python demos/01_timestep_schedule.py --out demo_out/schedule
"""

import argparse
from pathlib import Path

import numpy as np

from splatdistill.io import write_ppm
from splatdistill.plot import line_plot, side_by_side
from splatdistill.schedule import PhaseTable, fit_schedule, phase_masses, phase_occupancy, sample_timestep, t_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out/schedule")
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)

    table = PhaseTable()
    print("ranges", table.boundaries, "budgets", table.budgets, "total", table.total_steps)

    p = fit_schedule(table)
    print(f"fitted bell: left spread {p.s1:.1f}, right spread {p.s2:.1f}, mode {p.T:.1f}")
    print("mass per range   ", np.round(phase_masses(p, table), 4))
    print("budget share     ", np.round(np.array(table.budgets) / table.total_steps, 4))

    curve = t_curve(p, table)
    occ = phase_occupancy(curve, table)
    print("steps per range  ", occ, "(budgets", list(table.budgets), ")")
    for i in (1, 300, 900, 1200, 1400, 1800, 2400):
        print(f"  step {i:4d}: ceiling t = {curve[i - 1]}")

    # the sampler draws uniformly between the range floor and the ceiling
    rng = np.random.default_rng(0)
    draws = [sample_timestep(i, curve, table, rng) for i in range(1, table.total_steps + 1)]
    print("first 5 draws (warm-up):", draws[:5])
    print("last 5 draws:", draws[-5:])

    left = line_plot(np.arange(1, 1001), p.weights(), vlines=table.boundaries)
    right = line_plot(np.arange(1, len(curve) + 1), curve, color=(0.1, 0.3, 0.8), step=True)
    write_ppm(out / "schedule.ppm", side_by_side(left, right))
    print("wrote", out / "schedule.ppm")


if __name__ == "__main__":
    main()
