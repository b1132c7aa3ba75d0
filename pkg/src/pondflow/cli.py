"""Command-line front end.

Subcommands: ``run`` executes a configured simulation, ``bounds`` prints
the mesh size and explicit step bounds for a config, ``probe`` evaluates
the constitutive laws at one pressure.  Exit codes: 0 success, 1 invalid
usage or configuration, 2 runtime failure.
"""

import argparse
import math
import os
import re
import sys

from . import config as cfg_mod
from . import driver
from .errors import ParseError, ValidationError
from .hydraulics import Hydraulics
from .surface import cfl_bound, positivity_step_bound


def _fmt(value):
    return format(float(value), ".17g")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract here is 1.

    Also widens the stock negative-number matcher so option values in
    scientific notation (``--pressure -2e4``) parse as numbers instead of
    being mistaken for flags.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(
            r"^-\d+$|^-\d*\.\d+$|^-\d+\.?\d*[eE][-+]?\d+$")

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="pondflow",
                     description="saturated-unsaturated flow with ponding")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_run = sub.add_parser("run", help="execute a simulation")
    p_run.add_argument("--config", required=True, help="JSON config file")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--levels", type=int,
                       help="refinement levels (overrides config)")
    p_run.add_argument("--tau", type=float,
                       help="time step [s] (overrides config)")
    p_run.add_argument("--t-end", type=float, dest="t_end",
                       help="final time [s] (overrides config)")
    p_run.set_defaults(func=_cmd_run)

    p_bounds = sub.add_parser("bounds",
                              help="print mesh size and step bounds")
    p_bounds.add_argument("--config", required=True)
    p_bounds.set_defaults(func=_cmd_bounds)

    p_probe = sub.add_parser("probe",
                             help="evaluate the soil laws at a pressure")
    p_probe.add_argument("--config", required=True)
    p_probe.add_argument("--pressure", type=float, required=True,
                         help="pressure [Pa]")
    p_probe.set_defaults(func=_cmd_probe)
    return parser


def _configure_threads():
    raw = os.environ.get("RICHARDS_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError("RICHARDS_THREADS",
                              f"must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError("RICHARDS_THREADS", "must be >= 0")
    if n > 0:
        try:
            import numba
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass


def _cmd_run(args):
    cfg = cfg_mod.load_config(args.config)
    cfg = cfg_mod.override_config(cfg, out=args.out, levels=args.levels,
                                  tau=args.tau, t_end=args.t_end)
    report, _, _ = driver.run(cfg)
    print(f"steps = {report['steps']} / {report['planned_steps']}")
    print(f"final_time = {_fmt(report['final_time'])}")
    print(f"p in [{_fmt(report['p_min'])}, {_fmt(report['p_max'])}]")
    print(f"s in [{_fmt(report['s_min'])}, {_fmt(report['s_max'])}]")
    print(f"w in [{_fmt(report['w_min'])}, {_fmt(report['w_max'])}]")
    print(f"watermark = {_fmt(report['watermark'])}")
    print(f"bound_violations = {report['bound_violations']}")
    print(f"system_residual = {_fmt(report['system_residual'])}")
    print(f"output = {cfg.output.directory}")
    if report["failure"] is not None:
        sys.stderr.write(f"run failed: {report['failure']['message']}\n")
        return 2
    return 0


def _cmd_bounds(args):
    cfg = cfg_mod.load_config(args.config)
    sim = driver.Simulation(cfg)
    mesh = sim.mesh
    h = math.hypot(cfg.geometry.Lx / mesh.nx, cfg.geometry.Ly / mesh.ny)
    print(f"h = {_fmt(h)}")
    print(f"tau_cfl = {_fmt(cfl_bound(h, sim.hyd))}")
    state = sim.initial_state()
    if sim.trace.n_cells:
        tau_pos = positivity_step_bound(
            state.u[sim.trace.vertex_ids], sim.rain_rates(0.0),
            sim.step_cfg.c, sim.step_cfg.sigma, sim.hyd)
    else:
        tau_pos = math.inf
    print(f"tau_positivity = {_fmt(tau_pos)}")
    print(f"tau_configured = {_fmt(cfg.time.tau)}")
    return 0


def _cmd_probe(args):
    cfg = cfg_mod.load_config(args.config)
    hyd = Hydraulics(cfg.soil)
    p = args.pressure
    s = hyd.saturation_from_pressure(p)
    u = hyd.kirchhoff(p)
    print(f"p = {_fmt(p)}")
    print(f"s = {_fmt(s)}")
    print(f"kr = {_fmt(hyd.rel_perm(s))}")
    print(f"u = {_fmt(u)}")
    print(f"head = {_fmt(hyd.head(u))}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        _configure_threads()
        return args.func(args)
    except (ParseError, ValidationError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    except Exception as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
