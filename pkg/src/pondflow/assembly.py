"""P1 finite element assembly of the per-time-step obstacle problem.

One implicit step minimizes

    F(v) = 1/2 <A v, v> - <b, v> + sum_q phi_q(v_q)

over the box lower <= v <= upper, where A = tau * (P1 stiffness), b collects
the previous saturation, the upwinded gravity load and the surface-water
load, and the separable convex phi_q lump the storage and boundary-leakage
nonlinearities at the vertices (nodal quadrature).  Everything the scalar
minimizer needs -- values, derivatives, curvatures of phi_q -- is evaluated
through the hydraulics energy path so the pieces are mutually consistent.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DimensionError, DomainError
from .hydraulics import psi_factor
from .mesh import lumped_weights, outflow_vertices, triangle_areas

UPWIND_NODAL_MAX_Z = "nodal_max_z"
UPWIND_CENTRAL = "central"


@dataclass(frozen=True)
class NodalField:
    """Per-vertex scalars on one mesh level."""

    values: np.ndarray
    level: int

    @property
    def n_values(self):
        return np.asarray(self.values).shape[0]


@dataclass(frozen=True)
class StepConfig:
    """Per-step coupling constants and the affine source f(s) = f0 + f1*s."""

    tau: float
    c: float
    sigma: float
    f0: float = 0.0
    f1: float = 0.0

    def __post_init__(self):
        if self.tau <= 0.0:
            raise DomainError("tau must be positive")
        if self.c <= 0.0 or self.sigma <= 0.0:
            raise DomainError("c and sigma must be positive")
        if self.f1 > 0.0:
            raise DomainError("source slope f1 must be <= 0")


def _values(field):
    return np.asarray(field.values if hasattr(field, "values") else field,
                      dtype=float)


def _grad_coefficients(mesh):
    """P1 shape-function data: (b_i, c_i, area) per element, grad = (b,c)/2A."""
    p = mesh.vertices[mesh.triangles]
    x = p[..., 0]
    z = p[..., 1]
    bcoef = np.stack([z[:, 1] - z[:, 2], z[:, 2] - z[:, 0],
                      z[:, 0] - z[:, 1]], axis=1)
    ccoef = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2],
                      x[:, 1] - x[:, 0]], axis=1)
    return bcoef, ccoef, triangle_areas(mesh)


def assemble_stiffness(mesh):
    """Pure-Neumann P1 stiffness matrix, S_qr = integral grad(l_q).grad(l_r)."""
    bcoef, ccoef, areas = _grad_coefficients(mesh)
    local = (bcoef[:, :, None] * bcoef[:, None, :]
             + ccoef[:, :, None] * ccoef[:, None, :]) / (4.0 * areas)[:, None, None]
    tri = mesh.triangles
    rows = tri[:, [0, 0, 0, 1, 1, 1, 2, 2, 2]].ravel()
    cols = tri[:, [0, 1, 2, 0, 1, 2, 0, 1, 2]].ravel()
    S = sparse.coo_matrix((local.reshape(-1, 9).ravel(), (rows, cols)),
                          shape=(mesh.n_vertices, mesh.n_vertices))
    return S.tocsr()


def _element_rel_perm(mesh, s, hyd, upwind):
    if upwind == UPWIND_NODAL_MAX_Z:
        z = mesh.vertices[mesh.triangles][..., 1]
        at_top = z == z.max(axis=1)[:, None]
        kr = hyd.rel_perm(s)[mesh.triangles]
        # ties (two nodes sharing the top height) take the larger mobility,
        # which keeps mirror-symmetric problems exactly symmetric
        return np.where(at_top, kr, -np.inf).max(axis=1)
    if upwind == UPWIND_CENTRAL:
        return hyd.rel_perm(s)[mesh.triangles].mean(axis=1)
    raise DomainError(f"unknown upwind scheme {upwind!r}")


def assemble_gravity_load(mesh, s_n, hyd, upwind=UPWIND_NODAL_MAX_Z):
    """Gravity convection load (without the tau factor):

    g_q = sum_e m(s_e) * rho_g * integral_e e_z . grad(l_q),

    with the element mobility m = M0*kr taken at the element's highest
    vertex (NodalMaxZ, upstream for downward transport) or as the nodal
    mean (Central).
    """
    if hasattr(s_n, "level") and s_n.level != mesh.level:
        raise DimensionError("saturation field level does not match mesh")
    s = np.clip(_values(s_n), hyd.params.s_m, hyd.params.s_M)
    if s.shape[0] != mesh.n_vertices:
        raise DimensionError("saturation field size does not match mesh")
    kr_e = _element_rel_perm(mesh, s, hyd, upwind)
    _, ccoef, _ = _grad_coefficients(mesh)
    # integral_e e_z . grad(l_i) = c_i / 2 on each element
    contrib = (hyd.M0 * hyd.rho_g * kr_e)[:, None] * (ccoef / 2.0)
    g = np.zeros(mesh.n_vertices)
    np.add.at(g, mesh.triangles.ravel(), contrib.ravel())
    return g


class PhiFamily:
    """The separable convex parts phi_q(v) = h_q*Psi_x(v) + h_in_q*Psi_xi(v; w_q).

    Vectorized value/derivative/curvature evaluations for the solver, plus
    per-vertex scalar access.  Curvatures use the right-derivative
    convention at the kinks (u = 0 and, for closed-form soils, u = M0*p_b).
    """

    def __init__(self, hyd, cfg, h, h_in, w_vertex):
        self.hyd = hyd
        self.cfg = cfg
        self.h = h
        self.h_in = h_in
        self.w = w_vertex
        self.psi_w = psi_factor(w_vertex, cfg.sigma)
        self._in_idx = np.flatnonzero(h_in > 0.0)
        self._storage_coef = hyd.params.porosity - cfg.tau * cfg.f1
        self._bnd_coef = cfg.tau / (cfg.c * hyd.rho_g)
        if hyd.u_b < 0.0 and hyd.params.delta == 0.0:
            self.kinks = (hyd.u_b, 0.0)
        else:
            self.kinks = (0.0,)

    def __len__(self):
        return self.h.shape[0]

    def __getitem__(self, q):
        return lambda x: self.value_at(q, x)

    def _bnd_derivative(self, v, psi):
        pE = self.hyd._p_energy(v)
        return self._bnd_coef * (np.maximum(pE, 0.0)
                                 + psi * np.minimum(pE, 0.0))

    def value(self, v):
        cfg = self.cfg
        out = self.h * self.hyd.primitive_domain(v, cfg.tau, cfg.f0, cfg.f1)
        idx = self._in_idx
        if idx.size:
            out[idx] += self.h_in[idx] * self.hyd.primitive_boundary(
                v[idx], self.w[idx], cfg.tau, cfg.c, cfg.sigma)
        return out

    def derivative(self, v):
        cfg = self.cfg
        out = self.h * (self._storage_coef * self.hyd.sat_from_u(v)
                        - cfg.tau * cfg.f0)
        idx = self._in_idx
        if idx.size:
            out[idx] += self.h_in[idx] * self._bnd_derivative(
                v[idx], self.psi_w[idx])
        return out

    def curvature(self, v):
        out = self.h * self._storage_coef * self.hyd.dsat_du(v)
        idx = self._in_idx
        if idx.size:
            side = np.where(v[idx] >= 0.0, 1.0, self.psi_w[idx])
            out[idx] += (self.h_in[idx] * self._bnd_coef
                         * self.hyd.dpressure_du(v[idx]) * side)
        return out

    def value_at(self, q, x):
        cfg = self.cfg
        val = self.h[q] * self.hyd.primitive_domain(x, cfg.tau, cfg.f0,
                                                    cfg.f1)
        if self.h_in[q] > 0.0:
            val += self.h_in[q] * self.hyd.primitive_boundary(
                x, self.w[q], cfg.tau, cfg.c, cfg.sigma)
        return float(val)

    def derivative_at(self, q, x):
        cfg = self.cfg
        d = self.h[q] * (self._storage_coef * self.hyd.sat_from_u(x)
                         - cfg.tau * cfg.f0)
        if self.h_in[q] > 0.0:
            d += self.h_in[q] * float(self._bnd_derivative(
                np.float64(x), self.psi_w[q]))
        return float(d)

    def curvature_at(self, q, x):
        cur = self.h[q] * self._storage_coef * self.hyd.dsat_du(x)
        if self.h_in[q] > 0.0:
            side = 1.0 if x >= 0.0 else self.psi_w[q]
            cur += (self.h_in[q] * self._bnd_coef
                    * self.hyd.dpressure_du(x) * side)
        return float(cur)


@dataclass
class ObstacleProblem:
    """One implicit step as a box-constrained separable convex minimization."""

    A: sparse.csr_matrix
    b: np.ndarray
    phi: PhiFamily
    lower: np.ndarray
    upper: np.ndarray
    level: int

    @property
    def n(self):
        return self.b.shape[0]

    def gradient(self, v):
        """Full gradient A v - b + phi'(v) (right-derivative at kinks)."""
        return self.A @ v - self.b + self.phi.derivative(v)


def assemble_spatial_problem(mesh, trace, u_n, w_n, cfg, hyd,
                             upwind=UPWIND_NODAL_MAX_Z, stiffness=None,
                             include_gravity=True):
    """Build the obstacle problem for one implicit step.

    b_q = h_q*n*s(u^n_q) - tau*g_q + tau*h_in_q*w^n_q/c, A = tau*S, and the
    bounds encode v >= u_min (or unbounded for regularized soils) plus the
    seepage condition v <= 0 on outflow vertices.  ``stiffness`` lets the
    caller reuse the mesh-constant S across steps.
    """
    u = _values(u_n)
    w = _values(w_n)
    if hasattr(u_n, "level") and u_n.level != mesh.level:
        raise DimensionError("subsurface field level does not match mesh")
    if hasattr(w_n, "level") and w_n.level != mesh.level:
        raise DimensionError("surface field level does not match mesh")
    if u.shape[0] != mesh.n_vertices:
        raise DimensionError(
            f"u has {u.shape[0]} values, mesh has {mesh.n_vertices} vertices")
    if w.shape[0] != trace.n_cells:
        raise DimensionError(
            f"w has {w.shape[0]} values, trace grid has {trace.n_cells}")

    S = assemble_stiffness(mesh) if stiffness is None else stiffness
    A = (cfg.tau * S).tocsr()
    h = lumped_weights(mesh)
    s_n = hyd.sat_from_u(u)
    b = h * hyd.params.porosity * s_n
    if include_gravity:
        b -= cfg.tau * assemble_gravity_load(mesh, s_n, hyd, upwind)
    b[trace.vertex_ids] += cfg.tau * trace.weights * w / cfg.c

    h_in = np.zeros(mesh.n_vertices)
    h_in[trace.vertex_ids] = trace.weights
    w_vertex = np.zeros(mesh.n_vertices)
    w_vertex[trace.vertex_ids] = w

    lower = np.full(mesh.n_vertices, hyd.u_lower_bound)
    upper = np.full(mesh.n_vertices, np.inf)
    upper[outflow_vertices(mesh)] = 0.0

    phi = PhiFamily(hyd, cfg, h, h_in, w_vertex)
    return ObstacleProblem(A=A, b=b, phi=phi, lower=lower, upper=upper,
                           level=mesh.level)


def evaluate_energy(problem, v):
    """F(v) = 1/2 <Av,v> - <b,v> + sum phi_q(v_q); +inf outside the bounds."""
    vals = _values(v)
    if np.any(vals < problem.lower) or np.any(vals > problem.upper):
        return np.inf
    quad = 0.5 * float(vals @ (problem.A @ vals)) - float(problem.b @ vals)
    return quad + float(problem.phi.value(vals).sum())


def mass_balance_report(problem, u_n, u_star, active_tol=1e-12):
    """Per-step water bookkeeping [m^2 of water cross-section].

    storage      change of lumped content sum h*n*(s* - s^n)
    infiltration tau * sum h_in*(w^n/c - kappa(u*, w^n))
    source       tau * sum h*f(s*)
    outflow      flux absorbed by active bounds, read off the gradient
    residual     storage - infiltration - source + outflow; at convergence
                 this is the summed gradient over inactive vertices.
    """
    ph = problem.phi
    hyd, cfg = ph.hyd, ph.cfg
    u_n = _values(u_n)
    u_star = _values(u_star)
    s_n = hyd.sat_from_u(u_n)
    s_star = hyd.sat_from_u(u_star)
    storage = float(ph.h @ (hyd.params.porosity * (s_star - s_n)))
    idx = ph._in_idx
    infiltration = cfg.tau * float(
        ph.h_in[idx] @ (ph.w[idx] / cfg.c
                        - ph._bnd_derivative(u_star[idx], ph.psi_w[idx])
                        / cfg.tau))
    source = cfg.tau * float(ph.h @ (cfg.f0 + cfg.f1 * s_star))
    grad = problem.gradient(u_star)
    uscale = max(np.abs(u_star).max(), hyd.M0 * hyd.p_scale)
    at_upper = np.isfinite(problem.upper) \
        & (u_star >= problem.upper - active_tol * uscale)
    at_lower = np.isfinite(problem.lower) \
        & (u_star <= problem.lower + active_tol * uscale)
    active = at_upper | at_lower
    outflow = -float(grad[active].sum())
    residual = storage - infiltration - source + outflow
    return {
        "storage": storage,
        "infiltration": infiltration,
        "source": source,
        "outflow": outflow,
        "residual": residual,
        "n_active_upper": int(at_upper.sum()),
        "n_active_lower": int(at_lower.sum()),
    }
