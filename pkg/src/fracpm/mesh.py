"""Structured triangulations of axis-aligned rectangles.

Every cell of an ``nx`` by ``ny`` grid is split along the diagonal joining its
lower-left and upper-right corners, so all triangles are right triangles and
the mesh is weakly acute.  Local vertex 0 of every triangle is the lower-left
cell corner, which is also the corner with the smallest global index.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ElementGeometry:
    B: np.ndarray          # (2, 2), columns P1 - P0, P2 - P0
    area: float
    grad_basis: np.ndarray  # (3, 2)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh with a per-element geometry cache.

    Attributes
    ----------
    vertices : (N_h, 2) float array, row-major over the grid.
    triangles : (M_h, 3) int array, counterclockwise.
    B : (M_h, 2, 2) Jacobians of the reference maps ``x = P0 + B xhat``.
    area : (M_h,) element areas.
    grad_basis : (M_h, 3, 2) constant gradients of the barycentric coordinates.
    """

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    vertices: np.ndarray
    triangles: np.ndarray
    B: np.ndarray
    area: np.ndarray
    grad_basis: np.ndarray
    h: float

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @property
    def domain_area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def vertex_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def locate(self, x: float, y: float) -> int:
        """Index of an element containing the point ``(x, y)``."""
        hx = (self.x1 - self.x0) / self.nx
        hy = (self.y1 - self.y0) / self.ny
        u = (x - self.x0) / hx
        v = (y - self.y0) / hy
        if not (0.0 <= u <= self.nx and 0.0 <= v <= self.ny):
            raise ValueError(f"point ({x}, {y}) lies outside the mesh")
        i = min(int(u), self.nx - 1)
        j = min(int(v), self.ny - 1)
        # lower triangle has the right angle at the lower-right corner
        upper = (v - j) > (u - i)
        return 2 * (j * self.nx + i) + int(upper)


def _geometry(vertices, triangles):
    P = vertices[triangles]
    B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    area = 0.5 * np.abs(det)
    # grad of barycentric lambda_j, j=1,2 are the rows of B^{-1}
    Binv = np.empty_like(B)
    Binv[:, 0, 0] = B[:, 1, 1] / det
    Binv[:, 0, 1] = -B[:, 0, 1] / det
    Binv[:, 1, 0] = -B[:, 1, 0] / det
    Binv[:, 1, 1] = B[:, 0, 0] / det
    grads = np.empty((len(triangles), 3, 2))
    grads[:, 1] = Binv[:, 0]
    grads[:, 2] = Binv[:, 1]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return B, area, grads


def build_rect_mesh(x0, x1, y0, y1, nx, ny) -> Mesh:
    """Build the diagonal-split structured mesh of ``[x0, x1] x [y0, y1]``.

    >>> m = build_rect_mesh(0, 1, 0, 1, 1, 1)
    >>> m.n_vertices, m.n_elements
    (4, 2)
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise ValueError("nx and ny must be integers")
    if nx <= 0 or ny <= 0:
        raise ValueError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle: need x1 > x0 and y1 > y0")
    x0, x1, y0, y1 = float(x0), float(x1), float(y0), float(y1)
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    B, area, grads = _geometry(vertices, tris)
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    for arr in (vertices, tris, B, area, grads):
        arr.flags.writeable = False
    return Mesh(x0, x1, y0, y1, nx, ny, vertices, tris, B, area, grads,
                h=float(np.hypot(hx, hy)))


def element_geometry(mesh: Mesh, k: int) -> ElementGeometry:
    if not 0 <= k < mesh.n_elements:
        raise IndexError(f"element index {k} out of range [0, {mesh.n_elements})")
    return ElementGeometry(mesh.B[k].copy(), float(mesh.area[k]),
                           mesh.grad_basis[k].copy())


def geometry_from_points(P) -> ElementGeometry:
    """Geometry of a single triangle given its three vertices (P0 first)."""
    P = np.asarray(P, dtype=float).reshape(1, 3, 2)
    B, area, grads = _geometry(P.reshape(3, 2), np.array([[0, 1, 2]]))
    return ElementGeometry(B[0], float(area[0]), grads[0])


def element_angles(mesh: Mesh) -> np.ndarray:
    """Interior angles (radians), shape (M_h, 3)."""
    P = mesh.vertices[mesh.triangles]
    out = np.empty((mesh.n_elements, 3))
    for a in range(3):
        u = P[:, (a + 1) % 3] - P[:, a]
        v = P[:, (a + 2) % 3] - P[:, a]
        cos = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, a] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


def quality_ratio(mesh: Mesh) -> float:
    """max element diameter / min inradius."""
    P = mesh.vertices[mesh.triangles]
    edges = np.stack([np.linalg.norm(P[:, (a + 1) % 3] - P[:, a], axis=1)
                      for a in range(3)], axis=1)
    inradius = 2.0 * mesh.area / edges.sum(axis=1)
    return float(edges.max() / inradius.min())
