#!/usr/bin/env python3
"""Plot the explicit-update positivity bounds recorded in bounds.csv.

Reads the bounds.csv of a finished run (see run_sand_fig7.py) and plots
min{c, theta_1, theta_2} against the configured time step.  Without a
--run-dir argument it first performs a short coarse run of the shipped
sand scenario.
"""

import argparse
import csv
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pondflow import load_config, override_config, run  # noqa: E402

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                      "sand_fig7.json")


def read_bounds(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = np.array([int(r["n"]) for r in rows])
    c = np.array([float(r["c"]) for r in rows])
    th1 = np.array([float(r["theta1_min"]) for r in rows])
    th2 = np.array([float(r["theta2_min"]) for r in rows])
    tau = np.array([float(r["tau"]) for r in rows])
    return n, c, th1, th2, tau


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run-dir", help="directory holding bounds.csv")
    ap.add_argument("--save", help="output image path "
                                   "(default <run-dir>/step_bounds.png)")
    args = ap.parse_args()

    run_dir = args.run_dir
    if run_dir is None:
        run_dir = os.path.join("out", "step_bounds_demo")
        cfg = override_config(load_config(CONFIG), out=run_dir, levels=2,
                              t_end=35000.0)
        print(f"no --run-dir given; running {cfg.geometry.levels}-level "
              f"demo into {run_dir}")
        report, _, _ = run(cfg)
        if not report["completed"]:
            print("demo run failed:", report["failure"]["message"])
            return 2

    n, c, th1, th2, tau = read_bounds(os.path.join(run_dir, "bounds.csv"))
    t = n * tau
    bound = np.minimum(c, np.minimum(th1, th2))
    print(f"{len(n)} states; bound range [{bound.min():.4g}, "
          f"{bound.max():.4g}] s vs tau = {tau[0]:.4g} s")
    print(f"steps with tau above the bound: {(tau[:-1] > bound[:-1]).sum()}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.semilogy(t, th1, label=r"$\theta_1$ (rain-loaded)", lw=1.2)
    ax.semilogy(t, th2, label=r"$\theta_2$ (suction)", lw=1.2)
    ax.semilogy(t, bound, label="positivity bound", lw=1.8, color="k")
    ax.axhline(tau[0], ls="--", color="tab:red", label=r"configured $\tau$")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("admissible step [s]")
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = args.save or os.path.join(run_dir, "step_bounds.png")
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
