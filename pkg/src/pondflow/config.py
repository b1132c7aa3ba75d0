"""JSON configuration ingestion and validation.

The on-disk format is documented by ``schema/simconfig.json``; every
physical quantity carries its SI unit in the key name (``c_s``,
``sigma_m``, ``p_b_Pa``, ...).  Parsing is strict: unknown keys, missing
required keys and out-of-range values raise ValidationError naming the
offending field with its full dotted path, so a config typo never turns
into a silently different simulation.
"""

import json
import os
from dataclasses import dataclass, replace

from .assembly import UPWIND_CENTRAL, UPWIND_NODAL_MAX_Z
from .errors import DomainError, ParseError, ValidationError
from .hydraulics import (BROOKS_COREY, PAPER_NORMALIZED, PHYSICAL,
                         VAN_GENUCHTEN, Hydraulics, SoilParams)
from .solver import MODE_MMG, MODE_PGS_ONLY, SolverConfig
from .surface import RainSpec


@dataclass(frozen=True)
class GeometryConfig:
    Lx: float
    Ly: float
    nx0: int
    ny0: int
    levels: int
    out_intervals: tuple = ()


@dataclass(frozen=True)
class CouplingConfig:
    c: float        # hydraulic resistance of the surface layer [s]
    sigma: float    # ponding-height scale of the psi switch [m]


@dataclass(frozen=True)
class TimeConfig:
    tau: float
    T: float


@dataclass(frozen=True)
class InitialConfig:
    p0: float = None
    p0_file: str = None
    w0: float = 0.0
    w0_file: str = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    vtk_every: int = 0     # 0 disables VTK output
    csv_every: int = 1     # 0 disables surface.csv sampling


@dataclass(frozen=True)
class SimConfig:
    soil: SoilParams
    geometry: GeometryConfig
    coupling: CouplingConfig
    rain: RainSpec
    time: TimeConfig
    initial: InitialConfig
    solver: SolverConfig
    output: OutputConfig
    upwind: str = UPWIND_NODAL_MAX_Z
    rho_g_convention: str = PAPER_NORMALIZED


def _reject_unknown(obj, allowed, path):
    for key in obj:
        if key not in allowed:
            raise ValidationError(f"{path}.{key}" if path else key,
                                  "unknown field")


def _get(obj, key, path, required=False, default=None):
    if key in obj:
        return obj[key]
    if required:
        raise ValidationError(f"{path}.{key}", "missing required field")
    return default


def _number(obj, key, path, required=False, default=None, lo=None, hi=None,
            lo_open=False):
    val = _get(obj, key, path, required, default)
    if val is None:
        return None
    full = f"{path}.{key}"
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(full, f"expected a number, got {val!r}")
    val = float(val)
    if val != val:
        raise ValidationError(full, "NaN is not a valid value")
    if lo is not None and (val <= lo if lo_open else val < lo):
        cmp = ">" if lo_open else ">="
        raise ValidationError(full, f"must be {cmp} {lo}, got {val}")
    if hi is not None and val > hi:
        raise ValidationError(full, f"must be <= {hi}, got {val}")
    return val


def _integer(obj, key, path, required=False, default=None, lo=None):
    val = _get(obj, key, path, required, default)
    if val is None:
        return None
    full = f"{path}.{key}"
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValidationError(full, f"expected an integer, got {val!r}")
    if lo is not None and val < lo:
        raise ValidationError(full, f"must be >= {lo}, got {val}")
    return val


def _string(obj, key, path, required=False, default=None, choices=None):
    val = _get(obj, key, path, required, default)
    if val is None:
        return None
    full = f"{path}.{key}"
    if not isinstance(val, str):
        raise ValidationError(full, f"expected a string, got {val!r}")
    if choices is not None and val not in choices:
        raise ValidationError(full,
                              f"must be one of {sorted(choices)}, got {val!r}")
    return val


def _object(obj, key, path, required=False):
    val = _get(obj, key, path, required, {})
    full = f"{path}.{key}" if path else key
    if not isinstance(val, dict):
        raise ValidationError(full, "expected an object")
    return val


_SOIL_KEYS = {"model", "K_m2", "mu_Pa_s", "porosity", "rho_kg_m3", "g_m_s2",
              "s_m", "s_M", "p_b_Pa", "lam", "alpha_per_cm", "alpha_per_Pa",
              "l", "delta", "reg_kind"}


def _parse_soil(raw, convention):
    soil = _object(raw, "soil", "", required=True)
    _reject_unknown(soil, _SOIL_KEYS, "soil")
    model = _string(soil, "model", "soil", default=BROOKS_COREY,
                    choices={BROOKS_COREY, VAN_GENUCHTEN})
    kwargs = dict(
        model=model,
        K=_number(soil, "K_m2", "soil", required=True, lo=0.0, lo_open=True),
        mu=_number(soil, "mu_Pa_s", "soil", default=1.002e-3, lo=0.0,
                   lo_open=True),
        porosity=_number(soil, "porosity", "soil", required=True, lo=0.0,
                         hi=1.0, lo_open=True),
        rho=_number(soil, "rho_kg_m3", "soil", default=1000.0, lo=0.0,
                    lo_open=True),
        g=_number(soil, "g_m_s2", "soil", default=9.81, lo=0.0, lo_open=True),
        s_m=_number(soil, "s_m", "soil", required=True, lo=0.0, hi=1.0),
        s_M=_number(soil, "s_M", "soil", default=1.0, lo=0.0, hi=1.0,
                    lo_open=True),
        delta=_number(soil, "delta", "soil", default=0.0, lo=0.0),
        reg_kind=_string(soil, "reg_kind", "soil", default="max",
                         choices={"max", "plus"}),
        rho_g_convention=convention,
    )
    if model == BROOKS_COREY:
        p_b = _number(soil, "p_b_Pa", "soil", required=True, hi=0.0)
        if p_b == 0.0:
            raise ValidationError("soil.p_b_Pa", "must be < 0")
        kwargs["p_b"] = p_b
        kwargs["lam"] = _number(soil, "lam", "soil", required=True, lo=0.0,
                                lo_open=True)
        for key in ("alpha_per_cm", "alpha_per_Pa", "l"):
            if key in soil:
                raise ValidationError(f"soil.{key}",
                                      "not a brooks_corey parameter")
    else:
        has_cm = "alpha_per_cm" in soil
        has_pa = "alpha_per_Pa" in soil
        if has_cm == has_pa:
            raise ValidationError(
                "soil.alpha_per_cm",
                "van_genuchten needs exactly one of alpha_per_cm, "
                "alpha_per_Pa")
        key = "alpha_per_cm" if has_cm else "alpha_per_Pa"
        kwargs["alpha"] = _number(soil, key, "soil", required=True, lo=0.0,
                                  lo_open=True)
        kwargs["alpha_unit"] = "per_cm" if has_cm else "per_Pa"
        kwargs["l"] = _number(soil, "l", "soil", required=True, lo=1.0,
                              lo_open=True)
        if "p_b_Pa" in soil:
            raise ValidationError("soil.p_b_Pa",
                                  "not a van_genuchten parameter")
    try:
        return SoilParams(**kwargs)
    except DomainError as err:
        raise ValidationError("soil", str(err)) from err


def _parse_geometry(raw):
    geo = _object(raw, "geometry", "", required=True)
    _reject_unknown(geo, {"Lx_m", "Ly_m", "nx0", "ny0", "levels",
                          "out_intervals_m"}, "geometry")
    Lx = _number(geo, "Lx_m", "geometry", required=True, lo=0.0, lo_open=True)
    Ly = _number(geo, "Ly_m", "geometry", required=True, lo=0.0, lo_open=True)
    nx0 = _integer(geo, "nx0", "geometry", required=True, lo=1)
    ny0 = _integer(geo, "ny0", "geometry", required=True, lo=1)
    levels = _integer(geo, "levels", "geometry", required=True, lo=0)
    raw_iv = _get(geo, "out_intervals_m", "geometry", default=[])
    if not isinstance(raw_iv, list):
        raise ValidationError("geometry.out_intervals_m", "expected a list")
    intervals = []
    for i, pair in enumerate(raw_iv):
        field = f"geometry.out_intervals_m[{i}]"
        if (not isinstance(pair, list) or len(pair) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in pair)):
            raise ValidationError(field, "expected a [x_lo, x_hi] pair")
        x_lo, x_hi = float(pair[0]), float(pair[1])
        if not (0.0 <= x_lo < x_hi <= Lx):
            raise ValidationError(field,
                                  f"must satisfy 0 <= x_lo < x_hi <= {Lx}")
        intervals.append((x_lo, x_hi))
    intervals.sort()
    for (a_lo, a_hi), (b_lo, b_hi) in zip(intervals, intervals[1:]):
        if b_lo < a_hi:
            raise ValidationError("geometry.out_intervals_m",
                                  f"intervals overlap near x = {b_lo}")
    return GeometryConfig(Lx=Lx, Ly=Ly, nx0=nx0, ny0=ny0, levels=levels,
                          out_intervals=tuple(intervals))


def _parse_rain(raw):
    rain = _object(raw, "rain", "")
    _reject_unknown(rain, {"events"}, "rain")
    raw_events = _get(rain, "events", "rain", default=[])
    if not isinstance(raw_events, list):
        raise ValidationError("rain.events", "expected a list")
    events = []
    keys = {"x_lo_m", "x_hi_m", "rate_m_s", "t_lo_s", "t_hi_s"}
    for i, ev in enumerate(raw_events):
        field = f"rain.events[{i}]"
        if not isinstance(ev, dict):
            raise ValidationError(field, "expected an object")
        _reject_unknown(ev, keys, field)
        events.append((
            _number(ev, "x_lo_m", field, required=True),
            _number(ev, "x_hi_m", field, required=True),
            _number(ev, "rate_m_s", field, required=True, lo=0.0),
            _number(ev, "t_lo_s", field, required=True),
            _number(ev, "t_hi_s", field, required=True),
        ))
    try:
        return RainSpec(events=tuple(events))
    except DomainError as err:
        raise ValidationError("rain.events", str(err)) from err


def _parse_initial(raw, base_dir):
    init = _object(raw, "initial", "", required=True)
    _reject_unknown(init, {"p0_Pa", "p0_file", "w0_m", "w0_file"}, "initial")
    p0 = _number(init, "p0_Pa", "initial")
    p0_file = _string(init, "p0_file", "initial")
    if (p0 is None) == (p0_file is None):
        raise ValidationError("initial.p0_Pa",
                              "exactly one of p0_Pa, p0_file is required")
    w0 = _number(init, "w0_m", "initial", default=0.0, lo=0.0)
    w0_file = _string(init, "w0_file", "initial")
    if w0_file is not None and "w0_m" in init:
        raise ValidationError("initial.w0_m",
                              "w0_m and w0_file are mutually exclusive")
    paths = {}
    for key, rel in (("p0_file", p0_file), ("w0_file", w0_file)):
        if rel is None:
            paths[key] = None
            continue
        resolved = os.path.normpath(os.path.join(base_dir, rel))
        if not os.path.isfile(resolved):
            raise ValidationError(f"initial.{key}",
                                  f"file not found: {resolved}")
        paths[key] = resolved
    return InitialConfig(p0=p0, p0_file=paths["p0_file"], w0=w0,
                         w0_file=paths["w0_file"])


def _parse_solver(raw):
    sol = _object(raw, "solver", "")
    _reject_unknown(sol, {"max_iterations", "tol", "pre_smooth",
                          "post_smooth", "mode", "scalar_tol", "damping"},
                    "solver")
    kwargs = {}
    if "max_iterations" in sol:
        kwargs["max_iterations"] = _integer(sol, "max_iterations", "solver",
                                            lo=1)
    for key in ("tol", "scalar_tol"):
        if key in sol:
            kwargs[key] = _number(sol, key, "solver", lo=0.0, lo_open=True)
    for key in ("pre_smooth", "post_smooth"):
        if key in sol:
            kwargs[key] = _integer(sol, key, "solver", lo=0)
    if "mode" in sol:
        kwargs["mode"] = _string(sol, "mode", "solver",
                                 choices={MODE_MMG, MODE_PGS_ONLY})
    if "damping" in sol:
        kwargs["damping"] = _string(sol, "damping", "solver")
    try:
        return SolverConfig(**kwargs)
    except DomainError as err:
        raise ValidationError("solver", str(err)) from err


def _parse_output(raw):
    out = _object(raw, "output", "")
    _reject_unknown(out, {"directory", "vtk_every", "csv_every"}, "output")
    return OutputConfig(
        directory=_string(out, "directory", "output", default="out"),
        vtk_every=_integer(out, "vtk_every", "output", default=0, lo=0),
        csv_every=_integer(out, "csv_every", "output", default=1, lo=0),
    )


_TOP_KEYS = {"soil", "geometry", "coupling", "rain", "time", "initial",
             "solver", "output", "upwind", "rho_g_convention"}


def build_config(raw, base_dir="."):
    """Validate a parsed JSON document into a SimConfig."""
    if not isinstance(raw, dict):
        raise ValidationError("<root>", "top level must be an object")
    _reject_unknown(raw, _TOP_KEYS, "")
    convention = _string(raw, "rho_g_convention", "", default=PAPER_NORMALIZED,
                         choices={PAPER_NORMALIZED, PHYSICAL})
    upwind = _string(raw, "upwind", "", default=UPWIND_NODAL_MAX_Z,
                     choices={UPWIND_NODAL_MAX_Z, UPWIND_CENTRAL})
    soil = _parse_soil(raw, convention)
    geometry = _parse_geometry(raw)

    coup = _object(raw, "coupling", "", required=True)
    _reject_unknown(coup, {"c_s", "sigma_m"}, "coupling")
    coupling = CouplingConfig(
        c=_number(coup, "c_s", "coupling", required=True, lo=0.0,
                  lo_open=True),
        sigma=_number(coup, "sigma_m", "coupling", required=True, lo=0.0,
                      lo_open=True))

    tim = _object(raw, "time", "", required=True)
    _reject_unknown(tim, {"tau_s", "T_s"}, "time")
    tau = _number(tim, "tau_s", "time", required=True, lo=0.0, lo_open=True)
    T = _number(tim, "T_s", "time", required=True, lo=0.0, lo_open=True)
    if T < tau:
        raise ValidationError("time.T_s", f"must be >= tau_s = {tau}")

    return SimConfig(
        soil=soil,
        geometry=geometry,
        coupling=coupling,
        rain=_parse_rain(raw),
        time=TimeConfig(tau=tau, T=T),
        initial=_parse_initial(raw, base_dir),
        solver=_parse_solver(raw),
        output=_parse_output(raw),
        upwind=upwind,
        rho_g_convention=convention,
    )


def load_config(path):
    """Read, parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ParseError(f"{path}: {err.strerror or err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(
            f"{path}: line {err.lineno}, column {err.colno}: {err.msg}"
        ) from err
    return build_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def override_config(cfg, out=None, levels=None, tau=None, t_end=None):
    """Apply CLI overrides, re-checking the cross-field invariants."""
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=out))
    if levels is not None:
        if levels < 0:
            raise ValidationError("geometry.levels", "must be >= 0")
        cfg = replace(cfg, geometry=replace(cfg.geometry, levels=levels))
    time = cfg.time
    if tau is not None:
        if tau <= 0.0:
            raise ValidationError("time.tau_s", "must be > 0")
        time = replace(time, tau=tau)
    if t_end is not None:
        if t_end <= 0.0:
            raise ValidationError("time.T_s", "must be > 0")
        time = replace(time, T=t_end)
    if time.T < time.tau:
        raise ValidationError("time.T_s", f"must be >= tau_s = {time.tau}")
    return replace(cfg, time=time)


def make_hydraulics(cfg):
    """Hydraulics object for the configured soil."""
    return Hydraulics(cfg.soil)
