"""Negative fractional powers of the pencil (K_A + M_Q, M).

The discrete operator has eigenpairs ``K psi = lam M psi`` with
M-orthonormal ``psi``.  ``frac_inverse_apply`` evaluates

    c = -sum_k lam_k**(-s) (psi_k^T M f) psi_k      (nonzero lam_k only)

through a partial-fraction approximant r(z) ~ z**(-s) on the spectral
interval, one shifted solve ``(K - p_j M) x_j = M f`` per pole.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import ConvergenceError
from .fem import (_LOCAL_MASS, CoefficientSet, _local_stiffness, assemble_mass_consistent,
                  assemble_mass_lumped, assemble_Q_mass, assemble_stiffness_A, cg_solve,
                  lumped_weights)
from .mesh import Mesh
from .rational import MAX_DEGREE, RationalApprox, build_rational_approx

DENSE_LIMIT = 5000
# above this size shifted systems default to CG instead of cached LU factors
DIRECT_LIMIT = 20_000
SHIFT_CG_TOL = 1e-11
# the rational approximant covers [LO_MARGIN * lam_lo, lam_hi]
LO_MARGIN = 0.9


@dataclass(frozen=True, eq=False)
class FracOperator:
    """Assembled pencil with its spectral interval and rational approximant.

    ``kernel_mode`` is ``"K1"`` when Q vanishes identically (constants span the
    kernel of K) and ``"K0"`` otherwise.
    """

    mesh: Mesh
    coeff: CoefficientSet
    K: sp.csr_matrix
    M: sp.csr_matrix
    D: np.ndarray
    kernel_mode: str
    s: float
    lam_lo: float
    lam_hi: float
    rational: RationalApprox
    solver: str = "direct"
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def shifted_solve(self, j: int, rhs: np.ndarray) -> np.ndarray:
        """Solve (K - p_j M) x = rhs for pole index ``j``."""
        p = float(self.rational.poles[j].real)
        if self.solver == "direct":
            lu = self._lu.get(j)
            if lu is None:
                lu = spla.splu((self.K - p * self.M).tocsc())
                self._lu[j] = lu
            return lu.solve(rhs)
        return cg_solve((self.K - p * self.M).tocsr(), rhs, tol=SHIFT_CG_TOL)


def _element_pencils(mesh: Mesh, coeff: CoefficientSet, lumped: bool):
    AK, QK = coeff.sample(mesh)
    Ke = _local_stiffness(mesh, AK)
    if not coeff.q_is_zero:
        Ke = Ke + (QK * mesh.area)[:, None, None] * _LOCAL_MASS
    if lumped:
        Me = (mesh.area / 3.0)[:, None, None] * np.eye(3)
    else:
        Me = mesh.area[:, None, None] * _LOCAL_MASS
    return Ke, Me


def spectral_upper_bound(mesh: Mesh, coeff: CoefficientSet, lumped: bool = False) -> float:
    """Certified bound on the largest generalised eigenvalue.

    ``x^T K x = sum_e x_e^T K_e x_e <= max_e lam_max(K_e, M_e) x^T M x`` since
    every element mass matrix is positive definite.
    """
    Ke, Me = _element_pencils(mesh, coeff, lumped)
    Lc = np.linalg.cholesky(Me)
    Linv = np.linalg.inv(Lc)
    S = Linv @ Ke @ np.swapaxes(Linv, 1, 2)
    lam = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, 1, 2)))[:, -1]
    # relative rounding margin keeps the bound safe
    return float(lam.max() * (1.0 + 1e-12))


def smallest_eigenvalue(K, M, kernel_mode: str, tol: float = 1e-10, maxiter: int = 1000,
                        seed: int = 0, scale: float = 1.0, block: int = 4) -> float:
    """Smallest nonzero generalised eigenvalue by block inverse iteration.

    A Rayleigh-Ritz step on ``block`` vectors separates clustered eigenvalues,
    which single-vector iteration cannot resolve.  In ``K1`` mode the block is
    kept M-orthogonal to the constants and the factorised matrix is
    ``K + tau M`` with a tiny shift ``tau``.  The return value is the lowest
    Ritz value, an upper bound on the exact eigenvalue.
    """
    n = K.shape[0]
    ones = np.ones(n)
    m1 = M @ ones
    tau = 1e-8 * scale if kernel_mode == "K1" else 0.0
    p = max(1, min(block, n - (kernel_mode == "K1")))

    def deflate(V):
        if kernel_mode == "K1":
            V = V - np.outer(ones, (m1 @ V) / (m1 @ ones))
        return V

    lu = spla.splu((K + tau * M).tocsc())
    X = deflate(np.random.default_rng(seed).standard_normal((n, p)))
    theta = np.inf
    for it in range(1, maxiter + 1):
        Y = deflate(lu.solve(M @ X))
        Y /= np.sqrt(np.einsum("ij,ij->j", Y, M @ Y))
        ritz, V = scipy.linalg.eigh(Y.T @ (K @ Y), Y.T @ (M @ Y))
        X = Y @ V
        change = abs(ritz[0] - theta)
        theta = float(ritz[0])
        if change <= tol * abs(theta):
            return theta
    raise ConvergenceError("inverse iteration for the smallest eigenvalue stagnated",
                           residual=change / abs(theta), iterations=maxiter)


def estimate_spectral_interval(op: FracOperator, tol: float = 1e-10):
    """(lam_lo, lam_hi): inverse-iteration estimate and certified upper bound."""
    hi = spectral_upper_bound(op.mesh, op.coeff, lumped=_is_diagonal(op.M))
    lo = smallest_eigenvalue(op.K, op.M, op.kernel_mode, tol=tol, scale=hi)
    return lo, max(hi, lo)


def _is_diagonal(A) -> bool:
    A = sp.csr_matrix(A)
    return A.nnz == np.count_nonzero(A.diagonal())


def _check_order(s: float, force: bool) -> float:
    s = float(s)
    if force:
        if not 0.0 < s < 1.0:
            raise ValueError(f"fractional order must lie in (0, 1), got {s}")
    elif not 0.5 < s < 1.0:
        raise ValueError(f"fractional order must lie in (1/2, 1), got {s}; "
                         "pass force=True to explore other orders")
    return s


def build_frac_operator(mesh: Mesh, coeff: CoefficientSet, s: float, *, mass: str = "consistent",
                        tol: float = 1e-9, max_degree: int = MAX_DEGREE, solver: str = "auto",
                        force: bool = False) -> FracOperator:
    """Assemble the pencil, locate its spectrum and fit r(z) ~ z**(-s).

    Parameters
    ----------
    mass : "consistent" or "lumped" mass matrix in the pencil.
    tol : maximum relative error of the rational approximant.
    solver : "direct" (cached sparse LU per pole), "cg", or "auto".
    force : allow any order in (0, 1).
    """
    s = _check_order(s, force)
    if mass not in ("consistent", "lumped"):
        raise ValueError(f"mass must be 'consistent' or 'lumped', got {mass!r}")
    if solver == "auto":
        solver = "direct" if mesh.n_vertices <= DIRECT_LIMIT else "cg"
    if solver not in ("direct", "cg"):
        raise ValueError(f"unknown solver {solver!r}")
    K = assemble_stiffness_A(mesh, coeff)
    if not coeff.q_is_zero:
        K = (K + assemble_Q_mass(mesh, coeff)).tocsr()
    M = assemble_mass_consistent(mesh) if mass == "consistent" else assemble_mass_lumped(mesh)
    D = lumped_weights(mesh)
    mode = "K1" if coeff.q_is_zero else "K0"

    hi = spectral_upper_bound(mesh, coeff, lumped=(mass == "lumped"))
    lo = smallest_eigenvalue(K, M, mode, scale=hi)
    hi = max(hi, lo)
    rat = build_rational_approx(s, LO_MARGIN * lo, hi, tol=tol, max_degree=max_degree)
    return FracOperator(mesh, coeff, K, M, D, mode, s, lo, hi, rat, solver)


def project_diamond(op: FracOperator, f) -> np.ndarray:
    """Remove the lumped-mass mean in K1 mode; identity in K0 mode."""
    f = np.asarray(f, dtype=float)
    if op.kernel_mode == "K0":
        return f.copy()
    return f - (op.D @ f) / op.D.sum()


def frac_inverse_apply(op: FracOperator, f, num_threads: int | None = None) -> np.ndarray:
    """c = -L^{-s} f_diamond by partial fractions.

    Pole solves may run on a thread pool (``FRACPM_THREADS``); the weighted
    sum is always accumulated in pole order so the result does not depend on
    the number of workers.
    """
    fd = project_diamond(op, f)
    r = op.rational
    rhs = op.M @ fd
    poles = range(r.degree)
    if num_threads is None:
        num_threads = _kernels.worker_count()
    if num_threads > 1 and r.degree > 1:
        with ThreadPoolExecutor(max_workers=min(num_threads, r.degree)) as pool:
            sols = list(pool.map(lambda j: op.shifted_solve(j, rhs), poles))
    else:
        sols = [op.shifted_solve(j, rhs) for j in poles]
    acc = float(np.real(r.const)) * fd
    for w, x in zip(r.weights, sols):
        acc += float(np.real(w)) * x
    return -project_diamond(op, acc)


def dense_eigenpairs(op: FracOperator):
    """All generalised eigenpairs with M-orthonormal eigenvectors (ascending)."""
    if op.n > DENSE_LIMIT:
        raise ValueError(f"dense eigendecomposition limited to {DENSE_LIMIT} unknowns, "
                         f"got {op.n}")
    return scipy.linalg.eigh(op.K.toarray(), op.M.toarray())


def frac_inverse_dense_oracle(op: FracOperator, f, eig=None) -> np.ndarray:
    """Direct spectral evaluation of -L^{-s} f over the nonzero modes."""
    lam, psi = dense_eigenpairs(op) if eig is None else eig
    f = np.asarray(f, dtype=float)
    coef = psi.T @ (op.M @ f)
    start = 1 if op.kernel_mode == "K1" else 0
    lam, psi, coef = lam[start:], psi[:, start:], coef[start:]
    return -(psi @ (lam ** (-op.s) * coef))
