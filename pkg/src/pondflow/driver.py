"""Time-stepping driver: strings hydraulics, mesh, assembly, solver and
surface update into full runs with bookkeeping and on-disk output.

One step n -> n+1 is: assemble the spatial obstacle problem from
(u^n, w^n), minimize it for u^{n+1}, then advance the ponding heights
explicitly with the rain rate evaluated at t_{n+1}.  The Ledger records
per-step water bookkeeping, solver statistics and the positivity bounds
that end up in bounds.csv.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .assembly import (StepConfig, assemble_spatial_problem,
                       assemble_stiffness, mass_balance_report)
from .errors import BelowMinimalPressure, DimensionError, NonConvergence
from .hydraulics import Hydraulics
from .mesh import build_rect_hierarchy, trace_grid
from .output import append_bounds, append_surface, write_vtk
from .solver import solve
from .surface import SurfaceField, step_bound_terms, update_surface

_MASS_KEYS = ("storage", "pond_storage", "rain", "infiltration", "source",
              "outflow", "residual")


@dataclass
class SimState:
    """Discrete state at time t = n*tau."""

    n: int
    t: float
    u: np.ndarray   # generalized pressure at the finest-grid vertices
    w: np.ndarray   # ponding height per infiltration-boundary cell


@dataclass
class Ledger:
    """Per-run bookkeeping, one entry per completed step."""

    bounds: list = field(default_factory=list)    # (n, c, th1, th2, tau)
    mass: list = field(default_factory=list)      # per-step balance dicts
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    energy: list = field(default_factory=list)    # outer-iteration histories
    watermark: float = math.inf                   # most negative cell height
    totals: dict = field(
        default_factory=lambda: {key: 0.0 for key in _MASS_KEYS})

    def note_heights(self, w):
        if w.size:
            self.watermark = min(self.watermark, float(w.min()))

    def record(self, mass, report):
        self.mass.append(mass)
        self.iterations.append(report.iterations)
        self.residuals.append(report.final_residual)
        self.converged.append(report.converged)
        self.energy.append(list(report.energy_history))
        for key in _MASS_KEYS:
            self.totals[key] += mass[key]

    @property
    def system_residual(self):
        """Closing error of the cumulative water ledger:

        (soil + pond storage) - rain - source + outflow, which telescopes
        to the summed solver residuals when every step converged.
        """
        t = self.totals
        return (t["storage"] + t["pond_storage"] - t["rain"] - t["source"]
                + t["outflow"])

    def bound_violations(self, tau):
        """Steps whose tau exceeded the positivity bound at their start."""
        return sum(1 for (_, c, th1, th2, _) in self.bounds[:-1]
                   if tau > min(c, th1, th2))


def count_steps(T, tau):
    """ceil(T/tau) with a guard against float-division overshoot."""
    return max(int(math.ceil(T / tau - 1e-12)), 1)


class Simulation:
    """Mesh hierarchy, constitutive laws and step constants for one config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.hyd = Hydraulics(cfg.soil)
        geo = cfg.geometry
        self.hierarchy = build_rect_hierarchy(
            geo.Lx, geo.Ly, geo.nx0, geo.ny0, geo.levels,
            boundary_spec=geo.out_intervals)
        self.mesh = self.hierarchy.finest
        self.trace = trace_grid(self.mesh)
        self.stiffness = assemble_stiffness(self.mesh)
        self.step_cfg = StepConfig(tau=cfg.time.tau, c=cfg.coupling.c,
                                   sigma=cfg.coupling.sigma)
        self.n_steps = count_steps(cfg.time.T, cfg.time.tau)

    # -- state construction -------------------------------------------------

    def _nodal_initial(self):
        init = self.cfg.initial
        n = self.mesh.n_vertices
        if init.p0_file is not None:
            p0 = np.loadtxt(init.p0_file, dtype=float).ravel()
            if p0.shape[0] != n:
                raise DimensionError(
                    f"p0_file has {p0.shape[0]} values, finest grid has {n}")
            return p0
        return np.full(n, float(init.p0))

    def _cell_initial(self):
        init = self.cfg.initial
        m = self.trace.n_cells
        if init.w0_file is not None:
            w0 = np.loadtxt(init.w0_file, dtype=float).ravel()
            if w0.shape[0] != m:
                raise DimensionError(
                    f"w0_file has {w0.shape[0]} values, boundary has {m}")
            if np.any(w0 < 0.0):
                raise BelowMinimalPressure(
                    "initial ponding heights must be nonnegative")
            return w0
        return np.full(m, float(init.w0))

    def initial_state(self):
        u0 = self.hyd.kirchhoff(self._nodal_initial())
        if np.any(u0 < self.hyd.u_lower_bound):
            raise BelowMinimalPressure(
                f"initial pressure maps below the admissible minimum "
                f"u = {self.hyd.u_lower_bound}")
        return SimState(n=0, t=0.0, u=np.asarray(u0, dtype=float),
                        w=self._cell_initial())

    # -- stepping -----------------------------------------------------------

    def rain_rates(self, t):
        return self.cfg.rain.rates(self.trace.x, t)

    def bounds_row(self, state):
        """(n, c, theta1_min, theta2_min, tau) evaluated at the state."""
        c = self.step_cfg.c
        tau = self.step_cfg.tau
        if self.trace.n_cells == 0:
            return (state.n, c, math.inf, math.inf, tau)
        u_tr = state.u[self.trace.vertex_ids]
        r = self.rain_rates(state.t)
        th1, th2 = step_bound_terms(u_tr, r, c, self.step_cfg.sigma, self.hyd)
        return (state.n, c, float(th1.min()), float(th2.min()), tau)

    def advance(self, state, ledger=None):
        """One implicit subsurface step followed by the explicit pond update."""
        cfg = self.step_cfg
        level = self.mesh.level
        t_next = (state.n + 1) * cfg.tau
        w_field = SurfaceField(values=state.w, level=level)
        problem = assemble_spatial_problem(
            self.mesh, self.trace, state.u, w_field, cfg, self.hyd,
            upwind=self.cfg.upwind, stiffness=self.stiffness)
        try:
            u_next, report = solve(problem, self.hierarchy, state.u.copy(),
                                   config=self.cfg.solver)
        except NonConvergence as err:
            raise NonConvergence(
                f"step {state.n + 1} (t = {t_next}): {err.args[0]}",
                report=err.report, iterate=err.iterate) from err
        rain = SurfaceField(values=self.rain_rates(t_next), level=level)
        w_next = update_surface(w_field, u_next[self.trace.vertex_ids], rain,
                                cfg.tau, cfg.c, cfg.sigma, self.hyd)
        new_state = SimState(n=state.n + 1, t=t_next, u=u_next,
                             w=np.asarray(w_next.values, dtype=float))
        if ledger is not None:
            mass = mass_balance_report(problem, state.u, u_next)
            h_in = self.trace.weights
            mass["rain"] = cfg.tau * float(h_in @ rain.values)
            mass["pond_storage"] = float(h_in @ (new_state.w - state.w))
            ledger.record(mass, report)
            ledger.note_heights(new_state.w)
        return new_state

    # -- fields for output --------------------------------------------------

    def point_fields(self, state):
        """(p, s, u) nodal arrays for snapshots."""
        p = self.hyd.inv_kirchhoff(state.u)
        s = self.hyd.sat_from_u(state.u)
        return p, s, state.u


def save_state(path, state):
    """Serialize a state for bit-exact restart (path should end in .npz)."""
    np.savez(path, n=np.int64(state.n), t=np.float64(state.t),
             u=state.u, w=state.w)


def load_state(path):
    with np.load(path) as data:
        return SimState(n=int(data["n"]), t=float(data["t"]),
                        u=data["u"].copy(), w=data["w"].copy())


def _due(n, every, n_final):
    return every > 0 and (n % every == 0 or n == n_final)


def _final_report(sim, state, ledger, failure):
    p, s, _ = sim.point_fields(state)
    w = state.w
    report = {
        "completed": failure is None,
        "steps": int(state.n),
        "planned_steps": int(sim.n_steps),
        "final_time": float(state.t),
        "p_min": float(p.min()), "p_max": float(p.max()),
        "s_min": float(s.min()), "s_max": float(s.max()),
        "w_min": float(w.min()) if w.size else 0.0,
        "w_max": float(w.max()) if w.size else 0.0,
        "watermark": (float(ledger.watermark)
                      if ledger.watermark != math.inf else 0.0),
        "bound_violations": int(ledger.bound_violations(sim.step_cfg.tau)),
        "totals": {key: float(val) for key, val in ledger.totals.items()},
        "system_residual": float(ledger.system_residual),
        "failure": failure,
    }
    return report


def run(cfg, out_dir=None):
    """Execute a configured run and write its outputs.

    Returns (report, ledger, final_state).  A step failure does not raise:
    the partial outputs stay on disk and the report carries a ``failure``
    record with the step index and message.
    """
    sim = Simulation(cfg)
    out = out_dir if out_dir is not None else cfg.output.directory
    os.makedirs(out, exist_ok=True)
    vtk_every = cfg.output.vtk_every
    csv_every = cfg.output.csv_every
    surface_path = os.path.join(out, "surface.csv")
    bounds_path = os.path.join(out, "bounds.csv")
    for path in (surface_path, bounds_path):
        if os.path.exists(path):
            os.remove(path)

    ledger = Ledger()
    state = sim.initial_state()
    ledger.note_heights(state.w)
    failure = None

    def snapshot(st):
        if _due(st.n, vtk_every, sim.n_steps):
            p, s, u = sim.point_fields(st)
            write_vtk(os.path.join(out, f"fields_{st.n}.vtk"),
                      sim.mesh, p, s, u)
        if _due(st.n, csv_every, sim.n_steps) and sim.trace.n_cells:
            append_surface(surface_path, st.t, sim.trace, st.w)

    ledger.bounds.append(sim.bounds_row(state))
    snapshot(state)
    for _ in range(sim.n_steps):
        try:
            state = sim.advance(state, ledger)
        except NonConvergence as err:
            failure = {"step": state.n + 1, "message": str(err)}
            break
        ledger.bounds.append(sim.bounds_row(state))
        snapshot(state)

    for row in ledger.bounds:
        append_bounds(bounds_path, *row)
    report = _final_report(sim, state, ledger, failure)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report, ledger, state
