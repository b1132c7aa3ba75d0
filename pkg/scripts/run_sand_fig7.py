#!/usr/bin/env python3
"""Run the shipped sand scenario and summarize the outcome.

The default settings reproduce configs/sand_fig7.json as-is: four
refinement levels (161 x 17 vertices) and 3500 implicit steps, which
takes a few minutes.  Use --levels/--tau/--t-end to shrink the run for
a quick look, e.g.::

    python3 scripts/run_sand_fig7.py --levels 2 --t-end 35000 --out /tmp/quick
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pondflow import load_config, override_config, run  # noqa: E402

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                      "sand_fig7.json")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="output directory (default from config)")
    ap.add_argument("--levels", type=int)
    ap.add_argument("--tau", type=float)
    ap.add_argument("--t-end", type=float, dest="t_end")
    args = ap.parse_args()

    cfg = load_config(CONFIG)
    cfg = override_config(cfg, out=args.out, levels=args.levels,
                          tau=args.tau, t_end=args.t_end)
    steps = int(round(cfg.time.T / cfg.time.tau))
    print(f"grid: {cfg.geometry.nx0 * 2 ** cfg.geometry.levels} x "
          f"{cfg.geometry.ny0 * 2 ** cfg.geometry.levels} cells, "
          f"{steps} steps of {cfg.time.tau} s")
    report, ledger, state = run(cfg)

    print(f"completed: {report['completed']}  "
          f"({report['steps']}/{report['planned_steps']} steps)")
    print(f"pressure  [{report['p_min']:.6g}, {report['p_max']:.6g}] Pa")
    print(f"saturation [{report['s_min']:.6g}, {report['s_max']:.6g}]")
    print(f"pond      [{report['w_min']:.6g}, {report['w_max']:.6g}] m, "
          f"watermark {report['watermark']:.6g} m")
    print(f"steps exceeding the positivity bound: "
          f"{report['bound_violations']}")
    tot = report["totals"]
    print(f"water totals [m^2]: rain {tot['rain']:.6g}, "
          f"soil storage {tot['storage']:.6g}, "
          f"pond storage {tot['pond_storage']:.6g}, "
          f"outflow {tot['outflow']:.6g}")
    print(f"ledger closure residual: {report['system_residual']:.3e}")
    print(f"outputs in {cfg.output.directory}")
    return 0 if report["completed"] else 2


if __name__ == "__main__":
    sys.exit(main())
