"""Tests for stiffness/gravity assembly and the per-step obstacle problem."""

import numpy as np
import pytest
from scipy.integrate import quad

from pondflow import mesh as M
from pondflow.assembly import (
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
from pondflow.errors import DimensionError, DomainError
from pondflow.surface import SurfaceField
from soil_catalog import sand_hydraulics, vg_hydraulics

TAU = 100.0
C = 1.0e5
SIGMA = 0.02


@pytest.fixture(scope="module")
def sand():
    return sand_hydraulics()


@pytest.fixture(scope="module")
def unit_square():
    return M.build_rect_hierarchy(1.0, 1.0, 1, 1, 0).finest


@pytest.fixture(scope="module")
def small_hier():
    # 5x1 coarse cells on the 10 m x 1 m strip, outflow on both ends.
    return M.build_rect_hierarchy(10.0, 1.0, 5, 1, 0,
                                  boundary_spec=[(0.0, 2.0), (8.0, 10.0)])


def _interp_gradients(mesh, vals):
    """Per-element gradient of the P1 interpolant via a direct 3x3 solve."""
    grads = np.empty((mesh.n_triangles, 2))
    for e, tri in enumerate(mesh.triangles):
        pts = mesh.vertices[tri]
        mat = np.column_stack([np.ones(3), pts])
        coef = np.linalg.solve(mat, vals[tri])
        grads[e] = coef[1:]
    return grads


def test_stiffness_unit_square_hand_values(unit_square):
    S = assemble_stiffness(unit_square).toarray()
    # Vertex order: (0,0), (1,0), (0,1), (1,1); diagonal 0 -> 3.
    assert np.allclose(np.diag(S), [1.0, 1.0, 1.0, 1.0], atol=1e-14)
    for q, r in ((0, 1), (0, 2), (1, 3), (2, 3)):
        assert S[q, r] == pytest.approx(-0.5, abs=1e-14)
    assert abs(S[0, 3]) < 1e-14  # diagonal-coupled pair carries no entry
    assert abs(S[1, 2]) < 1e-14  # opposite corners share no triangle
    assert np.allclose(S, S.T, atol=0.0)


def test_stiffness_row_sums_zero(small_hier):
    S = assemble_stiffness(small_hier.finest)
    rows = np.asarray(S.sum(axis=1)).ravel()
    assert np.abs(rows).max() < 1e-13


def test_stiffness_linear_field_energy(unit_square, small_hier):
    S = assemble_stiffness(unit_square)
    x = unit_square.vertices[:, 0]
    assert float(x @ (S @ x)) == pytest.approx(1.0, abs=1e-13)
    S5 = assemble_stiffness(small_hier.finest)
    x5 = small_hier.finest.vertices[:, 0]
    assert float(x5 @ (S5 @ x5)) == pytest.approx(10.0, abs=1e-12)


def test_stiffness_matches_elementwise_quadrature(small_hier):
    mesh = small_hier.finest
    S = assemble_stiffness(mesh)
    rng = np.random.default_rng(2)
    areas = M.triangle_areas(mesh)
    for _ in range(5):
        u = rng.standard_normal(mesh.n_vertices)
        v = rng.standard_normal(mesh.n_vertices)
        gu = _interp_gradients(mesh, u)
        gv = _interp_gradients(mesh, v)
        want = float(((gu * gv).sum(axis=1) * areas).sum())
        got = float(u @ (S @ v))
        assert got == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_gravity_zero_at_residual_saturation(small_hier, sand):
    mesh = small_hier.finest
    s = np.full(mesh.n_vertices, sand.params.s_m)
    g = assemble_gravity_load(mesh, s, sand)
    assert np.all(g == 0.0)


def test_gravity_saturated_matches_boundary_integral(sand):
    # Constant mobility: g_q = M0*rho_g * contour integral of l_q * nu_z,
    # which vanishes at interior vertices and gives +/- M0*rho_g*dx on the
    # top/bottom edges and half of that at the corners.
    mesh = M.build_rect_hierarchy(2.0, 2.0, 2, 2, 0).finest
    s = np.ones(mesh.n_vertices)
    ga = assemble_gravity_load(mesh, s, sand, UPWIND_NODAL_MAX_Z)
    gb = assemble_gravity_load(mesh, s, sand, UPWIND_CENTRAL)
    assert np.allclose(ga, gb, atol=1e-20)
    coef = sand.M0 * sand.rho_g
    dx = 1.0
    assert abs(ga[4]) < 1e-12 * coef * dx          # interior vertex
    assert abs(ga[3]) < 1e-12 * coef * dx          # left-edge mid (nu_z = 0)
    assert ga[7] == pytest.approx(coef * dx, rel=1e-12)    # top mid
    assert ga[1] == pytest.approx(-coef * dx, rel=1e-12)   # bottom mid
    assert ga[0] == pytest.approx(-coef * dx / 2, rel=1e-12)
    assert ga[6] == pytest.approx(coef * dx / 2, rel=1e-12)


def test_gravity_upwind_takes_highest_node(sand):
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.array(["neumann"] * 3, dtype="<U7")
    mesh = M.Mesh(vertices=verts, triangles=tris, boundary_edges=edges,
                  boundary_tags=tags, level=0, nx=1, ny=1)
    s = np.array([sand.params.s_m, sand.params.s_m, 1.0])
    g_up = assemble_gravity_load(mesh, s, sand, UPWIND_NODAL_MAX_Z)
    g_c = assemble_gravity_load(mesh, s, sand, UPWIND_CENTRAL)
    coef = sand.M0 * sand.rho_g
    # c-coefficients of the triangle: (x2-x1, x0-x2, x1-x0) = (-1, 0, 1)
    assert np.allclose(g_up, coef * 1.0 * np.array([-0.5, 0.0, 0.5]),
                       rtol=1e-14)
    assert np.allclose(g_c, coef * (1.0 / 3.0) * np.array([-0.5, 0.0, 0.5]),
                       rtol=1e-14)


def test_gravity_upwind_tie_takes_larger_mobility(sand):
    # flat-top triangle: two nodes share the maximal height, and mirroring
    # the saturation pattern across x must mirror the load exactly
    verts = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.array(["neumann"] * 3, dtype="<U7")
    mesh = M.Mesh(vertices=verts, triangles=tris, boundary_edges=edges,
                  boundary_tags=tags, level=0, nx=1, ny=1)
    s = np.array([1.0, sand.params.s_m, 0.5])
    s_flip = np.array([1.0, 0.5, sand.params.s_m])
    g = assemble_gravity_load(mesh, s, sand, UPWIND_NODAL_MAX_Z)
    g_flip = assemble_gravity_load(mesh, s_flip, sand, UPWIND_NODAL_MAX_Z)
    assert np.array_equal(g, g_flip)
    # the larger of the two top-node mobilities (kr at s=0.5) is used
    kr = float(sand.rel_perm(np.array([0.5]))[0])
    ccoef = np.array([-1.0, 0.0, 1.0])
    assert np.allclose(g, sand.M0 * sand.rho_g * kr * ccoef / 2, rtol=1e-14)


def test_problem_structure(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    u0 = NodalField(np.full(mesh.n_vertices, sand.kirchhoff(-2.0e4)), 0)
    w0 = SurfaceField(np.zeros(trace.n_cells), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    A = prob.A
    assert (A != A.T).nnz == 0
    assert np.abs(np.asarray(A.sum(axis=1)).ravel()).max() < 1e-11
    assert np.all(A.diagonal() > 0.0)
    S = assemble_stiffness(mesh)
    assert np.allclose(A.toarray(), TAU * S.toarray(), rtol=1e-15)
    out = M.outflow_vertices(mesh)
    assert np.all(prob.upper[out] == 0.0)
    mask = np.ones(mesh.n_vertices, dtype=bool)
    mask[out] = False
    assert np.all(np.isinf(prob.upper[mask]))
    assert np.all(prob.lower == sand.u_lower_bound)
    assert prob.lower[0] > sand.u_min


def test_problem_unbounded_below_when_regularized(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    reg = sand_hydraulics(delta=0.05)
    u0 = NodalField(np.full(mesh.n_vertices, reg.kirchhoff(-2.0e4)), 0)
    w0 = SurfaceField(np.zeros(trace.n_cells), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, reg)
    assert np.all(np.isneginf(prob.lower))


def test_surface_load_term(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=100.0, c=1.0e5, sigma=SIGMA)
    u0 = NodalField(np.full(mesh.n_vertices, sand.kirchhoff(-2.0e4)), 0)
    w_dry = SurfaceField(np.zeros(trace.n_cells), 0)
    w_wet = SurfaceField(np.full(trace.n_cells, SIGMA), 0)
    b_dry = assemble_spatial_problem(mesh, trace, u0, w_dry, cfg, sand).b
    b_wet = assemble_spatial_problem(mesh, trace, u0, w_wet, cfg, sand).b
    diff = b_wet - b_dry
    want = np.zeros(mesh.n_vertices)
    want[trace.vertex_ids] = 2.0e-5 * trace.weights
    assert np.allclose(diff, want, rtol=1e-13, atol=1e-22)


def test_rest_state_is_stationary(small_hier, sand):
    # Saturated rest state without gravity: gradient vanishes identically
    # at v = 0, so the zero field minimizes the convex energy.
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    u0 = NodalField(np.zeros(mesh.n_vertices), 0)
    w0 = SurfaceField(np.zeros(trace.n_cells), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand,
                                    include_gravity=False)
    grad0 = prob.gradient(np.zeros(mesh.n_vertices))
    assert np.abs(grad0).max() < 1e-18
    f0 = evaluate_energy(prob, np.zeros(mesh.n_vertices))
    rng = np.random.default_rng(4)
    for _ in range(10):
        q = rng.integers(mesh.n_vertices)
        v = np.zeros(mesh.n_vertices)
        v[q] = -1e-4 if prob.upper[q] == 0.0 else rng.choice([-1e-4, 1e-4])
        assert evaluate_energy(prob, v) > f0


def _oracle_energy(mesh, trace, prob, v, hyd, cfg, upwind, u_n, w_cells):
    """Term-by-term quadrature of the step functional, built independently."""
    areas = M.triangle_areas(mesh)
    gv = _interp_gradients(mesh, v)
    quad_term = 0.5 * cfg.tau * float(((gv ** 2).sum(axis=1) * areas).sum())

    # The saturation curve itself is dual-route tested in the hydraulics
    # suite; this oracle re-derives the quadrature/assembly around it.
    s_n = hyd.sat_from_u(u_n)
    z = mesh.vertices[mesh.triangles][..., 1]
    if upwind == UPWIND_NODAL_MAX_Z:
        kr_n = hyd.rel_perm(s_n)
        kr_e = np.empty(mesh.n_triangles)
        for e in range(mesh.n_triangles):
            zmax = z[e].max()
            kr_e[e] = max(kr_n[t] for t, zt in zip(mesh.triangles[e], z[e])
                          if zt == zmax)
        mob = hyd.M0 * kr_e * hyd.rho_g
    else:
        mob = hyd.M0 * hyd.rel_perm(s_n)[mesh.triangles].mean(axis=1) \
            * hyd.rho_g
    gravity = cfg.tau * float((mob * gv[:, 1] * areas).sum())

    h = np.zeros(mesh.n_vertices)
    np.add.at(h, mesh.triangles.ravel(), np.repeat(areas / 3.0, 3))
    npor = hyd.params.porosity
    ref = hyd.psi_ref
    storage = 0.0
    for q in range(mesh.n_vertices):
        # Split at the curve's breakpoints: the whole unsaturated structure
        # sits in a sliver near u = 0 that a single adaptive pass over a
        # much wider interval can sample straight over.
        edges = [ref] + [t for t in (hyd.u_b, 0.0) if ref < t < v[q]] + [v[q]]
        Q = sum(quad(lambda t: hyd.sat_from_u(t), a, b,
                     limit=400, epsabs=1e-16, epsrel=1e-13)[0]
                for a, b in zip(edges, edges[1:]))
        storage += h[q] * ((npor - cfg.tau * cfg.f1) * Q
                           - cfg.tau * cfg.f0 * (v[q] - ref))
    storage -= float(h @ (npor * s_n * v))

    boundary = 0.0
    from pondflow.hydraulics import psi_factor
    for k, q in enumerate(trace.vertex_ids):
        # For table-backed soils the leakage primitive integrates the
        # energy-path pressure; quadrature of that same curve is the
        # independent route (for sand the two pressures coincide).
        head = lambda t: hyd._p_energy(t) / hyd.rho_g
        pos, _ = quad(lambda t: max(head(t), 0.0), 0.0, max(v[q], 0.0),
                      limit=200, epsabs=1e-16, epsrel=1e-13)
        neg, _ = quad(lambda t: min(head(t), 0.0), 0.0, min(v[q], 0.0),
                      limit=200, epsabs=1e-16, epsrel=1e-13)
        psi = psi_factor(w_cells[k], cfg.sigma)
        boundary += trace.weights[k] * cfg.tau * (pos + psi * neg) / cfg.c
        boundary -= cfg.tau * trace.weights[k] * w_cells[k] * v[q] / cfg.c
    return quad_term + gravity + storage + boundary


@pytest.mark.parametrize("soil,upwind", [
    ("sand", UPWIND_NODAL_MAX_Z),
    ("sand", UPWIND_CENTRAL),
    ("silt", UPWIND_NODAL_MAX_Z),
])
def test_energy_matches_independent_quadrature(small_hier, soil, upwind):
    hyd = sand_hydraulics() if soil == "sand" else \
        vg_hydraulics("silt_loam_ge3")
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA, f0=1e-9, f1=-2e-9)
    rng = np.random.default_rng(8)
    u_n = rng.uniform(0.7 * hyd.u_min, 2e-4, size=mesh.n_vertices)
    w_cells = rng.uniform(0.0, 0.05, size=trace.n_cells)
    prob = assemble_spatial_problem(mesh, trace, NodalField(u_n, 0),
                                    SurfaceField(w_cells, 0), cfg, hyd,
                                    upwind=upwind)
    v = rng.uniform(0.7 * hyd.u_min, 2e-4, size=mesh.n_vertices)
    v[M.outflow_vertices(mesh)] = np.minimum(
        v[M.outflow_vertices(mesh)], 0.0)
    got = evaluate_energy(prob, v)
    want = _oracle_energy(mesh, trace, prob, v, hyd, cfg, upwind, u_n,
                          w_cells)
    assert got == pytest.approx(want, rel=1e-10, abs=1e-14)


def test_energy_outside_bounds_is_inf(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    u0 = NodalField(np.full(mesh.n_vertices, -1e-3), 0)
    w0 = SurfaceField(np.zeros(trace.n_cells), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    v = np.full(mesh.n_vertices, -1e-3)
    v[M.outflow_vertices(mesh)[0]] = 1e-5  # violates the seepage bound
    assert evaluate_energy(prob, v) == np.inf
    v2 = np.full(mesh.n_vertices, -1e-3)
    v2[3] = sand.u_lower_bound - 1e-6
    assert evaluate_energy(prob, v2) == np.inf


def test_energy_zero_problem(small_hier, sand):
    mesh = small_hier.finest
    n = mesh.n_vertices
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    phi = PhiFamily(sand, cfg, np.zeros(n), np.zeros(n), np.zeros(n))
    prob = ObstacleProblem(A=0.0 * assemble_stiffness(mesh),
                           b=np.zeros(n), phi=phi,
                           lower=np.full(n, -np.inf),
                           upper=np.full(n, np.inf), level=0)
    rng = np.random.default_rng(1)
    for _ in range(3):
        v = rng.uniform(0.9 * sand.u_min, 1e-3, size=n)
        assert evaluate_energy(prob, v) == 0.0


def test_phi_scalar_access_matches_vectorized(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    rng = np.random.default_rng(12)
    u0 = NodalField(rng.uniform(-4e-3, 0.0, size=mesh.n_vertices), 0)
    w0 = SurfaceField(rng.uniform(0.0, 0.1, size=trace.n_cells), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    v = rng.uniform(-5e-3, 4e-4, size=mesh.n_vertices)
    vals = prob.phi.value(v)
    ders = prob.phi.derivative(v)
    curs = prob.phi.curvature(v)
    assert len(prob.phi) == mesh.n_vertices
    for q in (0, 3, int(trace.vertex_ids[2]), mesh.n_vertices - 1):
        assert prob.phi[q](v[q]) == pytest.approx(vals[q], rel=1e-14,
                                                  abs=1e-300)
        assert prob.phi.derivative_at(q, v[q]) == pytest.approx(
            ders[q], rel=1e-14, abs=1e-300)
        assert prob.phi.curvature_at(q, v[q]) == pytest.approx(
            curs[q], rel=1e-14, abs=1e-300)


def test_phi_derivative_is_gradient_of_value(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    u0 = NodalField(np.full(mesh.n_vertices, -3e-3), 0)
    w0 = SurfaceField(np.full(trace.n_cells, 0.01), 0)
    prob = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    q = int(trace.vertex_ids[3])
    for x in (-4e-3, -1e-3, 2e-4):
        step = 1e-7 * max(abs(x), 1e-3)
        fd = (prob.phi.value_at(q, x + step)
              - prob.phi.value_at(q, x - step)) / (2 * step)
        assert prob.phi.derivative_at(q, x) == pytest.approx(fd, rel=1e-6)


def test_mass_balance_identity(small_hier, sand):
    # residual == sum of the gradient over inactive vertices, any iterate.
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA, f0=1e-9, f1=-1e-9)
    rng = np.random.default_rng(19)
    u_n = rng.uniform(-4e-3, 0.0, size=mesh.n_vertices)
    w = rng.uniform(0.0, 0.05, size=trace.n_cells)
    prob = assemble_spatial_problem(mesh, trace, NodalField(u_n, 0),
                                    SurfaceField(w, 0), cfg, sand)
    u_star = rng.uniform(-4e-3, 0.0, size=mesh.n_vertices)
    u_star[M.outflow_vertices(mesh)[:2]] = 0.0  # park two nodes at the bound
    rep = mass_balance_report(prob, u_n, u_star)
    grad = prob.gradient(u_star)
    inactive = np.ones(mesh.n_vertices, dtype=bool)
    inactive[M.outflow_vertices(mesh)[:2]] = False
    assert rep["n_active_upper"] == 2
    assert rep["residual"] == pytest.approx(float(grad[inactive].sum()),
                                            rel=1e-10, abs=1e-15)
    scale = rep["storage"] if rep["storage"] else 1.0
    assert abs(rep["storage"] - rep["infiltration"] - rep["source"]
               + rep["outflow"] - rep["residual"]) < 1e-12 * abs(scale)


def test_dimension_errors(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    good_u = NodalField(np.zeros(mesh.n_vertices), 0)
    good_w = SurfaceField(np.zeros(trace.n_cells), 0)
    with pytest.raises(DimensionError):
        assemble_spatial_problem(mesh, trace,
                                 NodalField(np.zeros(5), 0), good_w,
                                 cfg, sand)
    with pytest.raises(DimensionError):
        assemble_spatial_problem(mesh, trace, good_u,
                                 SurfaceField(np.zeros(2), 0), cfg, sand)
    with pytest.raises(DimensionError):
        assemble_spatial_problem(mesh, trace,
                                 NodalField(np.zeros(mesh.n_vertices), 3),
                                 good_w, cfg, sand)
    with pytest.raises(DomainError):
        StepConfig(tau=0.0, c=C, sigma=SIGMA)
    with pytest.raises(DomainError):
        StepConfig(tau=TAU, c=C, sigma=SIGMA, f1=0.5)


def test_assembly_is_deterministic(small_hier, sand):
    mesh = small_hier.finest
    trace = M.trace_grid(mesh)
    cfg = StepConfig(tau=TAU, c=C, sigma=SIGMA)
    rng = np.random.default_rng(3)
    u0 = NodalField(rng.uniform(-4e-3, 0.0, size=mesh.n_vertices), 0)
    w0 = SurfaceField(rng.uniform(0.0, 0.1, size=trace.n_cells), 0)
    p1 = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    p2 = assemble_spatial_problem(mesh, trace, u0, w0, cfg, sand)
    assert np.array_equal(p1.b, p2.b)
    assert np.array_equal(p1.A.data, p2.A.data)
    assert np.array_equal(p1.A.indices, p2.A.indices)
