"""Structured triangulations of a rectangle and their refinement hierarchies.

The domain is the rectangle [0, Lx] x [0, Ly] with the lower-left corner in
the origin.  Every level is a uniform nx-by-ny grid of squares, each split
into two triangles along the lower-left -> upper-right diagonal.  Vertices
are numbered row by row from the bottom, ``index = iy * (nx + 1) + ix``, so
boundary tagging and the inter-level transfer operators are purely
positional.

Boundary roles: the entire top edge couples to the surface water
(infiltration, tag "in"), prescribed x-intervals on the bottom edge carry the
seepage-face outflow condition (tag "out"), and everything else is no-flow
(tag "neumann").
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DimensionError, GeometryError

TAG_IN = "in"
TAG_OUT = "out"
TAG_NEUMANN = "neumann"

# Relative slack when matching interval endpoints against grid lines.
_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class Mesh:
    """One structured triangulation.

    vertices:       (n, 2) float array of (x, z) coordinates
    triangles:      (m, 3) int array, counterclockwise vertex triples
    boundary_edges: (e, 2) int array of vertex pairs along the boundary
    boundary_tags:  (e,) array of "in" / "out" / "neumann"
    level:          position in the hierarchy (0 = coarsest)
    nx, ny:         cell counts of the underlying grid
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    level: int
    nx: int
    ny: int

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested meshes from coarse (index 0) to fine, with transfer matrices.

    ``prolongations[j]`` maps nodal vectors on level j to level j + 1 by
    piecewise-linear interpolation; restriction is its exact transpose.
    """

    levels: tuple
    prolongations: tuple

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def depth(self):
        return len(self.levels)


@dataclass(frozen=True)
class TraceGrid:
    """Dual grid on the infiltration boundary, one cell per boundary vertex.

    vertex_ids: mesh vertex indices ordered by x
    x:          cell centers (the vertex x-coordinates)
    weights:    dual-cell lengths h_q; they sum to the length of the boundary
    cells:      (n, 2) interval bounds of each dual cell
    """

    vertex_ids: np.ndarray
    x: np.ndarray
    weights: np.ndarray
    cells: np.ndarray

    @property
    def n_cells(self):
        return self.vertex_ids.shape[0]


def _validated_intervals(boundary_spec, Lx, nx_fine):
    """Check outflow intervals: inside [0, Lx], disjoint, on fine grid lines."""
    intervals = [(float(lo), float(hi)) for lo, hi in boundary_spec]
    tol = _ALIGN_RTOL * Lx
    dx = Lx / nx_fine
    for lo, hi in intervals:
        if not (-tol <= lo < hi <= Lx + tol):
            raise GeometryError(
                f"outflow interval ({lo}, {hi}) is not inside [0, {Lx}]")
        for end in (lo, hi):
            if abs(end / dx - round(end / dx)) * dx > tol:
                raise GeometryError(
                    f"outflow interval endpoint {end} does not lie on the "
                    f"finest grid (spacing {dx})")
    intervals.sort()
    for (_, hi), (lo, _) in zip(intervals, intervals[1:]):
        if lo < hi - tol:
            raise GeometryError("outflow intervals overlap")
    return intervals


def _build_level(Lx, Ly, nx, ny, intervals, level):
    xs = np.linspace(0.0, Lx, nx + 1)
    zs = np.linspace(0.0, Ly, ny + 1)
    X, Z = np.meshgrid(xs, zs)
    vertices = np.column_stack([X.ravel(), Z.ravel()])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (iy * (nx + 1) + ix).ravel()
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    top0 = ny * (nx + 1)
    bottom = np.column_stack([np.arange(nx), np.arange(1, nx + 1)])
    top = np.column_stack([top0 + np.arange(nx), top0 + np.arange(1, nx + 1)])
    left = np.column_stack([np.arange(ny) * (nx + 1),
                            np.arange(1, ny + 1) * (nx + 1)])
    right = left + nx
    boundary_edges = np.vstack([bottom, top, left, right])

    tags = np.empty(boundary_edges.shape[0], dtype="<U7")
    tags[:] = TAG_NEUMANN
    tags[nx:2 * nx] = TAG_IN
    tol = _ALIGN_RTOL * Lx
    for k in range(nx):
        x0, x1 = xs[k], xs[k + 1]
        if any(lo - tol <= x0 and x1 <= hi + tol for lo, hi in intervals):
            tags[k] = TAG_OUT

    return Mesh(vertices=vertices, triangles=triangles,
                boundary_edges=boundary_edges, boundary_tags=tags,
                level=level, nx=nx, ny=ny)


def _prolongation_matrix(coarse, fine):
    """Piecewise-linear interpolation from a level to its red refinement.

    Fine vertices with both indices even copy the coarse value; edge
    midpoints average their two endpoints.  The cell-center vertex (both
    indices odd) sits on the coarse diagonal, so interpolation on the
    triangulation averages the diagonal endpoints only.
    """
    nxc = coarse.nx
    nxf, nyf = fine.nx, fine.ny
    ixf, izf = np.meshgrid(np.arange(nxf + 1), np.arange(nyf + 1))
    ixf = ixf.ravel()
    izf = izf.ravel()
    fine_id = izf * (nxf + 1) + ixf
    # Coarse index below-left of each fine vertex.
    base = (izf // 2) * (nxc + 1) + ixf // 2
    odd_x = ixf % 2 == 1
    odd_z = izf % 2 == 1

    rows = []
    cols = []
    vals = []

    both_even = ~odd_x & ~odd_z
    rows.append(fine_id[both_even])
    cols.append(base[both_even])
    vals.append(np.ones(both_even.sum()))

    horiz = odd_x & ~odd_z
    for shift in (0, 1):
        rows.append(fine_id[horiz])
        cols.append(base[horiz] + shift)
        vals.append(np.full(horiz.sum(), 0.5))

    vert = ~odd_x & odd_z
    for shift in (0, nxc + 1):
        rows.append(fine_id[vert])
        cols.append(base[vert] + shift)
        vals.append(np.full(vert.sum(), 0.5))

    center = odd_x & odd_z
    for shift in (0, nxc + 2):
        rows.append(fine_id[center])
        cols.append(base[center] + shift)
        vals.append(np.full(center.sum(), 0.5))

    P = sparse.coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_vertices, coarse.n_vertices))
    return P.tocsr()


def build_rect_hierarchy(Lx, Ly, nx0, ny0, J, boundary_spec=()):
    """Build J+1 nested levels on [0, Lx] x [0, Ly].

    The coarsest level is an nx0-by-ny0 grid; each further level doubles both
    cell counts (uniform red refinement).  ``boundary_spec`` lists the
    x-intervals of the bottom edge that carry the outflow condition; their
    endpoints must lie on finest-level grid lines.  The whole top edge is the
    infiltration boundary.
    """
    if not (Lx > 0.0 and Ly > 0.0):
        raise GeometryError("domain side lengths must be positive")
    if nx0 < 1 or ny0 < 1:
        raise GeometryError("need at least one cell in each direction")
    if J < 0:
        raise GeometryError("number of refinements must be >= 0")
    intervals = _validated_intervals(boundary_spec, Lx, nx0 * 2 ** J)
    levels = [_build_level(Lx, Ly, nx0 * 2 ** j, ny0 * 2 ** j, intervals, j)
              for j in range(J + 1)]
    prolongations = tuple(_prolongation_matrix(levels[j], levels[j + 1])
                          for j in range(J))
    return MeshHierarchy(levels=tuple(levels), prolongations=prolongations)


def triangle_areas(mesh):
    """Signed triangle areas; positive for the counterclockwise orientation."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def lumped_weights(mesh):
    """Diagonal-mass-matrix weights: a third of the adjacent triangle areas."""
    areas = triangle_areas(mesh)
    h = np.zeros(mesh.n_vertices)
    np.add.at(h, mesh.triangles.ravel(), np.repeat(areas / 3.0, 3))
    return h


def outflow_vertices(mesh):
    """Sorted indices of all vertices on an outflow edge."""
    edges = mesh.boundary_edges[mesh.boundary_tags == TAG_OUT]
    return np.unique(edges)


def trace_grid(mesh):
    """Dual cells on the infiltration boundary.

    Each boundary vertex of the top edge gets the dual cell spanning half of
    each adjacent infiltration edge, so the weights h_q sum to the length of
    the infiltration boundary.
    """
    edges = mesh.boundary_edges[mesh.boundary_tags == TAG_IN]
    if edges.shape[0] == 0:
        raise GeometryError("mesh has no infiltration boundary")
    half = np.zeros(mesh.n_vertices)
    lengths = np.linalg.norm(
        mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    np.add.at(half, edges.ravel(), np.repeat(lengths / 2.0, 2))
    ids = np.unique(edges)
    x = mesh.vertices[ids, 0]
    order = np.argsort(x)
    ids = ids[order]
    x = x[order]
    weights = half[ids]
    # Cell boundaries: midpoints between neighbours, outer ends at the
    # extreme vertices (whose cells are one-sided).
    bounds = np.concatenate([[x[0]], 0.5 * (x[:-1] + x[1:]), [x[-1]]])
    cells = np.column_stack([bounds[:-1], bounds[1:]])
    return TraceGrid(vertex_ids=ids, x=x, weights=weights, cells=cells)


def prolongate(hierarchy, field, level):
    """Interpolate a nodal field from ``level`` to ``level + 1``."""
    if not 0 <= level < len(hierarchy.prolongations):
        raise DimensionError(f"no prolongation from level {level}")
    P = hierarchy.prolongations[level]
    field = np.asarray(field)
    if field.shape[0] != P.shape[1]:
        raise DimensionError(
            f"field has {field.shape[0]} entries, level {level} has "
            f"{P.shape[1]} vertices")
    return P @ field


def restrict(hierarchy, field, level):
    """Restrict a residual from ``level`` to ``level - 1`` (transpose of
    prolongation)."""
    if not 1 <= level < len(hierarchy.levels):
        raise DimensionError(f"no restriction from level {level}")
    P = hierarchy.prolongations[level - 1]
    field = np.asarray(field)
    if field.shape[0] != P.shape[0]:
        raise DimensionError(
            f"field has {field.shape[0]} entries, level {level} has "
            f"{P.shape[0]} vertices")
    return P.T @ field
