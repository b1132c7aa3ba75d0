"""Saturated-unsaturated groundwater flow with ponding-driven infiltration.

Finite element solver for the Kirchhoff-transformed Richards equation coupled
to a surface-water balance, with outflow handled as an obstacle condition and
each implicit step solved by monotone multigrid minimization.
"""

from .errors import (
    BelowMinimalPressure,
    DegenerateSaturation,
    DimensionError,
    DomainError,
    GeometryError,
    NonConvergence,
    NotCoercive,
    ParseError,
    ValidationError,
)
from .assembly import (
    NodalField,
    ObstacleProblem,
    PhiFamily,
    StepConfig,
    UPWIND_CENTRAL,
    UPWIND_NODAL_MAX_Z,
    assemble_gravity_load,
    assemble_spatial_problem,
    assemble_stiffness,
    evaluate_energy,
    mass_balance_report,
)
from .hydraulics import Hydraulics, SoilParams, psi_factor
from .mesh import (
    Mesh,
    MeshHierarchy,
    TraceGrid,
    build_rect_hierarchy,
    lumped_weights,
    outflow_vertices,
    prolongate,
    restrict,
    trace_grid,
    triangle_areas,
)
from .solver import (
    MODE_MMG,
    MODE_PGS_ONLY,
    ScalarFunction,
    SolveReport,
    SolverConfig,
    coarse_correction,
    pgs_sweep,
    scalar_convex_minimize,
    solve,
    vi_residual,
)
from .surface import (
    RainSpec,
    SurfaceField,
    cfl_bound,
    coupling_flux_g,
    positivity_step_bound,
    step_bound_terms,
    update_surface,
)

from .config import (
    CouplingConfig,
    GeometryConfig,
    InitialConfig,
    OutputConfig,
    SimConfig,
    TimeConfig,
    build_config,
    load_config,
    override_config,
)
from .driver import (
    Ledger,
    SimState,
    Simulation,
    count_steps,
    load_state,
    run,
    save_state,
)
from .output import append_bounds, append_surface, write_vtk

__version__ = "0.1.0"
