"""Writers for diagnostics series and nodal-field snapshots."""

from pathlib import Path
from typing import Iterable

import numpy as np

from .mesh import Mesh
from .stepper import Diagnostics

DIAG_HEADER = ",".join(Diagnostics.FIELDS)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def diagnostics_row(d: Diagnostics) -> str:
    return ",".join(_fmt(getattr(d, f)) for f in Diagnostics.FIELDS)


class DiagnosticsWriter:
    """Streams rows to a CSV file; each row is flushed so partial runs survive."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="\n")
        self._fh.write(DIAG_HEADER + "\n")
        self._fh.flush()

    def write(self, d: Diagnostics) -> None:
        self._fh.write(diagnostics_row(d) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_diagnostics_csv(rows: Iterable[Diagnostics], path) -> None:
    with DiagnosticsWriter(path) as w:
        for d in rows:
            w.write(d)


def read_diagnostics_csv(path) -> dict:
    """Columns of a diagnostics CSV as float arrays keyed by header name."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty diagnostics file")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln],
                    dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def write_snapshot(field, mesh: Mesh, path, fmt: str = "csv", name: str = "rho") -> None:
    """Nodal field as ``x,y,value`` CSV rows or a legacy ASCII VTK grid."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise ValueError("field length does not match the mesh")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            fh.write("x,y,value\n")
            for (x, y), v in zip(mesh.vertices, field):
                fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    elif fmt == "vtk":
        tri = mesh.triangles
        with open(path, "w", newline="\n") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"fracpm {name}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_vertices} double\n")
            for x, y in mesh.vertices:
                fh.write(f"{x:.17g} {y:.17g} 0\n")
            fh.write(f"CELLS {len(tri)} {4 * len(tri)}\n")
            for a, b, c in tri:
                fh.write(f"3 {a} {b} {c}\n")
            fh.write(f"CELL_TYPES {len(tri)}\n")
            fh.write("5\n" * len(tri))
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in field:
                fh.write(f"{v:.17g}\n")
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")


def extract_slice(field, mesh: Mesh, axis: str, value: float):
    """Values along the grid line ``axis = value`` (``axis`` is "x" or "y").

    The line must coincide with a mesh line; returns ``(coords, values)``.
    """
    field = np.asarray(field, dtype=float)
    if axis == "y":
        lo, hi, n = mesh.y0, mesh.y1, mesh.ny
    elif axis == "x":
        lo, hi, n = mesh.x0, mesh.x1, mesh.nx
    else:
        raise ValueError("slice axis must be 'x' or 'y'")
    k = (value - lo) / (hi - lo) * n
    j = int(round(k))
    if abs(k - j) > 1e-9 or not 0 <= j <= n:
        raise ValueError(f"{axis} = {value} is not a mesh line")
    grid = field.reshape(mesh.ny + 1, mesh.nx + 1)
    pts = mesh.vertices.reshape(mesh.ny + 1, mesh.nx + 1, 2)
    if axis == "y":
        return pts[j, :, 0].copy(), grid[j].copy()
    return pts[:, j, 1].copy(), grid[:, j].copy()


def write_slice(coords, values, path, coord_name: str = "x") -> None:
    """Cross-section CSV with header ``<coord>,value``."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{coord_name},value\n")
        for x, v in zip(coords, values):
            fh.write(f"{x:.17g},{v:.17g}\n")


def parse_slice(spec: str):
    """``"y=0"`` -> ("y", 0.0)."""
    try:
        axis, val = spec.replace(" ", "").split("=")
        val = float(val)
    except ValueError:
        raise ValueError(f"slice must look like 'y=0', got {spec!r}") from None
    if axis not in ("x", "y"):
        raise ValueError(f"slice axis must be x or y, got {axis!r}")
    return axis, val
