"""Sparse P1 assembly on the structured meshes and a Jacobi-preconditioned CG.

Operators are ``scipy.sparse.csr_matrix``; nodal fields are 1-D float arrays.
Coefficients are sampled once per element at the barycenter.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .cutoffs import CutoffParams
from .errors import ConvergenceError
from .mesh import Mesh

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients of the elliptic operator -div(A grad u) + Q u.

    ``A(x, y)`` and ``Q(x, y)`` receive coordinate arrays of equal shape and
    return arrays of shape ``x.shape + (2, 2)`` and ``x.shape``.
    """

    A: Callable
    Q: Callable
    Lambda1: float
    Lambda2: float
    q_is_zero: bool
    name: str = field(default="custom", compare=False)

    def sample(self, mesh: Mesh):
        """A and Q at the element barycenters."""
        c = mesh.barycenters
        AK = np.broadcast_to(np.asarray(self.A(c[:, 0], c[:, 1]), dtype=float),
                             (mesh.n_elements, 2, 2))
        QK = np.broadcast_to(np.asarray(self.Q(c[:, 0], c[:, 1]), dtype=float),
                             (mesh.n_elements,))
        return np.ascontiguousarray(AK), np.ascontiguousarray(QK)

    def check(self, mesh: Mesh, n_dirs: int = 8, seed: int = 0) -> None:
        """Validate symmetry, ellipticity bounds and the sign of Q on ``mesh``."""
        AK, QK = self.sample(mesh)
        if not np.allclose(AK, np.swapaxes(AK, 1, 2), rtol=0, atol=1e-14):
            raise ValueError("A is not symmetric at some barycenter")
        v = np.random.default_rng(seed).standard_normal((n_dirs, 2))
        quad = np.einsum("di,kij,dj->kd", v, AK, v)
        vv = np.einsum("di,di->d", v, v)
        slack = 1e-12 * np.abs(quad).max()
        if np.any(quad < self.Lambda1 * vv - slack) or np.any(quad > self.Lambda2 * vv + slack):
            raise ValueError("A violates the declared ellipticity bounds")
        if np.any(QK < 0):
            raise ValueError("Q must be nonnegative")
        if self.q_is_zero and np.any(QK != 0):
            raise ValueError("q_is_zero declared but Q does not vanish")
        if not self.q_is_zero and not np.any(QK > 0):
            raise ValueError("Q vanishes on the mesh but q_is_zero is False")


def A_identity():
    def A(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape + (2, 2))
    return A, 1.0, 1.0


def A_diag(a11, a22):
    if a11 <= 0 or a22 <= 0:
        raise ValueError("diagonal entries of A must be positive")
    D = np.diag([float(a11), float(a22)])

    def A(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(D, x.shape + (2, 2))
    return A, min(a11, a22), max(a11, a22)


def Q_zero(x, y):
    return np.zeros(np.shape(x))


def Q_quadratic(coef):
    def Q(x, y):
        return coef * (np.asarray(x) ** 2 + np.asarray(y) ** 2)
    return Q


def Q_step(hi, lo):
    def Q(x, y):
        return np.where(np.asarray(y) > 0, float(hi), float(lo))
    return Q


def Q_const(q):
    def Q(x, y):
        return np.full(np.shape(x), float(q))
    return Q


def make_coefficients(A_spec=("identity",), Q_spec=("zero",)) -> CoefficientSet:
    """Build a CoefficientSet from preset tuples.

    ``A_spec``: ``("identity",)`` or ``("diag", a11, a22)``.
    ``Q_spec``: ``("zero",)``, ``("quadratic", coef)``, ``("step", hi, lo)``
    or ``("const", q)``.
    """
    kind = A_spec[0]
    if kind == "identity":
        A, l1, l2 = A_identity()
    elif kind == "diag":
        A, l1, l2 = A_diag(*A_spec[1:])
    else:
        raise ValueError(f"unknown A preset {kind!r}")

    kind = Q_spec[0]
    if kind == "zero":
        Q, qz = Q_zero, True
    elif kind == "quadratic":
        Q, qz = Q_quadratic(float(Q_spec[1])), float(Q_spec[1]) == 0.0
    elif kind == "step":
        hi, lo = map(float, Q_spec[1:])
        if hi < 0 or lo < 0:
            raise ValueError("step values must be nonnegative")
        Q, qz = Q_step(hi, lo), hi == 0.0 and lo == 0.0
    elif kind == "const":
        q = float(Q_spec[1])
        if q < 0:
            raise ValueError("Q must be nonnegative")
        Q, qz = Q_const(q), q == 0.0
    else:
        raise ValueError(f"unknown Q preset {kind!r}")
    name = f"A={'/'.join(map(str, A_spec))},Q={'/'.join(map(str, Q_spec))}"
    return CoefficientSet(A, Q, l1, l2, qz, name)


# --- assembly --------------------------------------------------------------

def _pattern(mesh: Mesh):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return rows, cols


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows, cols = _pattern(mesh)
    n = mesh.n_vertices
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _local_stiffness(mesh: Mesh, AK=None):
    G = mesh.grad_basis
    if AK is None:
        GA = G
    else:
        GA = np.einsum("kjb,kab->kja", G, AK)
    return mesh.area[:, None, None] * np.einsum("kia,kja->kij", G, GA)


def assemble_stiffness_A(mesh: Mesh, coeff: CoefficientSet) -> sp.csr_matrix:
    """Entries sum_K |K| grad phi_j^T A(bary_K) grad phi_i."""
    AK, _ = coeff.sample(mesh)
    return _assemble(mesh, _local_stiffness(mesh, AK))


def assemble_stiffness_iso(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, _local_stiffness(mesh))


def assemble_stiffness_split(mesh: Mesh):
    """The x-x and y-y parts of the isotropic stiffness, K_iso = K_xx + K_yy."""
    G = mesh.grad_basis
    a = mesh.area[:, None, None]
    kxx = a * G[:, :, None, 0] * G[:, None, :, 0]
    kyy = a * G[:, :, None, 1] * G[:, None, :, 1]
    return _assemble(mesh, kxx), _assemble(mesh, kyy)


def assemble_mass_consistent(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, mesh.area[:, None, None] * _LOCAL_MASS)


def assemble_mass_lumped(mesh: Mesh) -> sp.csr_matrix:
    d = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.area / 3.0, 3),
                    minlength=mesh.n_vertices)
    return sp.diags(d, format="csr")


def lumped_weights(mesh: Mesh) -> np.ndarray:
    """Diagonal of the lumped mass matrix."""
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.area / 3.0, 3),
                       minlength=mesh.n_vertices)


def assemble_Q_mass(mesh: Mesh, coeff: CoefficientSet) -> sp.csr_matrix:
    _, QK = coeff.sample(mesh)
    if coeff.q_is_zero:
        return sp.csr_matrix((mesh.n_vertices, mesh.n_vertices))
    return _assemble(mesh, (QK * mesh.area)[:, None, None] * _LOCAL_MASS)


def assemble_convection_rhs(mesh: Mesh, rho, c, delta, L, coeff: CoefficientSet,
                            AK=None, num_threads=None) -> np.ndarray:
    """Vector with entries sum_K |K| (Theta(rho)|_K A_K grad c|_K) . grad phi_i|_K.

    ``AK`` may be passed to skip re-sampling the coefficient matrix.
    """
    p = CutoffParams(delta, L)
    rho = np.ascontiguousarray(rho, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    if rho.shape != (mesh.n_vertices,) or c.shape != (mesh.n_vertices,):
        raise ValueError("rho and c must be nodal fields on the mesh")
    if AK is None:
        AK, _ = coeff.sample(mesh)
    return _kernels.convection_rhs(mesh.triangles, mesh.B, mesh.grad_basis, mesh.area,
                                   AK, rho, c, p.delta, p.L, num_threads=num_threads)


def load_vector(mesh: Mesh, f: Callable) -> np.ndarray:
    """b_i = int f phi_i by the edge-midpoint rule (exact for quadratics)."""
    P = mesh.vertices[mesh.triangles]
    # midpoint m_a is opposite local vertex a
    mids = np.stack([(P[:, 1] + P[:, 2]) / 2, (P[:, 2] + P[:, 0]) / 2,
                     (P[:, 0] + P[:, 1]) / 2], axis=1)
    fm = np.asarray(f(mids[..., 0], mids[..., 1]), dtype=float)
    w = mesh.area[:, None] / 3.0
    # phi_i is 1/2 at the two midpoints not opposite to i
    contrib = 0.5 * w * (fm.sum(axis=1, keepdims=True) - fm)
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(),
                       minlength=mesh.n_vertices)


# --- solver ----------------------------------------------------------------

@dataclass
class SolveInfo:
    iterations: int
    residual: float


def cg_solve(op, rhs, tol=1e-10, maxiter=None, x0=None, deflate_constants=False,
             return_info=False):
    """Jacobi-preconditioned conjugate gradients.

    With ``deflate_constants`` the problem is solved on the orthogonal
    complement of the constant vector (for PSD operators whose kernel is the
    constants; the right-hand side is projected first).

    Raises
    ------
    ConvergenceError
        If the relative residual is still above ``tol`` after ``maxiter`` steps.
    """
    b = np.asarray(rhs, dtype=float).copy()
    n = b.shape[0]
    if op.shape != (n, n):
        raise ValueError("operator and right-hand side sizes differ")
    if maxiter is None:
        maxiter = 10 * n
    if deflate_constants:
        b -= b.mean()
    diag = op.diagonal() if hasattr(op, "diagonal") else np.diag(op)
    if np.any(diag <= 0):
        raise ValueError("Jacobi preconditioner needs a positive diagonal")
    inv_diag = 1.0 / diag

    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if bnorm == 0.0:
        x[:] = 0.0
        info = SolveInfo(0, 0.0)
        return (x, info) if return_info else x
    r = b - op @ x
    if deflate_constants:
        r -= r.mean()
    z = inv_diag * r
    if deflate_constants:
        z -= z.mean()
    pdir = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < maxiter:
        q = op @ pdir
        alpha = rz / (pdir @ q)
        x += alpha * pdir
        r -= alpha * q
        if deflate_constants:
            r -= r.mean()
        res = np.linalg.norm(r) / bnorm
        it += 1
        if res <= tol:
            break
        z = inv_diag * r
        if deflate_constants:
            z -= z.mean()
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    if res > tol:
        raise ConvergenceError(f"CG did not reach tol={tol:g} in {maxiter} iterations",
                               residual=res, iterations=it)
    if deflate_constants:
        x -= x.mean()
    info = SolveInfo(it, res)
    return (x, info) if return_info else x
