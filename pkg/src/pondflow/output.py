"""Snapshot and time-series writers.

Everything is plain text with LF line endings and %.17g floats, so a run
reproduces byte-for-byte: legacy-ASCII VTK snapshots of the subsurface
fields, surface.csv with the ponding heights, and bounds.csv with the
per-step positivity bounds.
"""

import os

import numpy as np


def _fmt(value):
    return format(float(value), ".17g")


def write_vtk(path, mesh, p, s, u):
    """Legacy ASCII VTK snapshot with point scalars p, s, u (in that order)."""
    n = mesh.n_vertices
    m = mesh.n_triangles
    for name, field in (("p", p), ("s", s), ("u", u)):
        if np.asarray(field).shape != (n,):
            raise ValueError(f"field {name} must have one value per vertex")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("pondflow fields\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, z in mesh.vertices:
            fh.write(f"{_fmt(x)} {_fmt(z)} 0\n")
        fh.write(f"CELLS {m} {4 * m}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {m}\n")
        for _ in range(m):
            fh.write("5\n")
        fh.write(f"POINT_DATA {n}\n")
        for name, field in (("p", p), ("s", s), ("u", u)):
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for value in np.asarray(field, dtype=float):
                fh.write(_fmt(value) + "\n")


def _append_rows(path, header, rows):
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="ascii", newline="\n") as fh:
        if fresh:
            fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def append_surface(path, t, trace, w):
    """Append one sampled state to surface.csv: a row per boundary cell."""
    w = np.asarray(w, dtype=float)
    rows = [f"{_fmt(t)},{_fmt(x)},{_fmt(val)}"
            for x, val in zip(trace.x, w)]
    _append_rows(path, "t,x_center,w", rows)


def append_bounds(path, n, c, theta1_min, theta2_min, tau):
    """Append one state row to bounds.csv."""
    row = (f"{int(n)},{_fmt(c)},{_fmt(theta1_min)},{_fmt(theta2_min)},"
           f"{_fmt(tau)}")
    _append_rows(path, "n,c,theta1_min,theta2_min,tau", [row])
