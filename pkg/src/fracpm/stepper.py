"""Implicit Euler time stepping with entropy cut-offs.

Each step solves

    D (rho^n - rho^{n-1}) / dt = -mu K_iso rho^n + r(rho^n, c^n),
    c^n = -L^{-s} (beta^L(rho^n))_diamond,

where ``r_i = sum_K |K| (Theta(rho)|_K A_K grad c|_K) . grad phi_i|_K``, by a
damped fixed-point iteration whose linear part ``D/dt + mu K_iso`` is
factorised once per run.  When that iteration blows up or stalls, the step
is restarted from the previous state with Anderson mixing on the same map.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import SimConfig
from .cutoffs import CutoffParams, beta_L, entropy_G
from .errors import ConvergenceError
from .fem import (CoefficientSet, assemble_convection_rhs, assemble_stiffness_iso, cg_solve,
                  load_vector, lumped_weights)
from .fracop import FracOperator, build_frac_operator, frac_inverse_apply
from .mesh import Mesh, build_rect_mesh

log = logging.getLogger(__name__)

MIN_OMEGA = 1.0 / 1024
# Picard residual growth beyond this factor counts as divergence
BLOWUP = 1e6
ANDERSON_DEPTH = 10


@dataclass(frozen=True)
class SchemeParams:
    dt: float
    t_final: float
    mu: float
    cutoffs: CutoffParams
    s: float
    fp_tol: float = 1e-10
    fp_maxiter: int = 200
    omega: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"t_final / dt = {n} must be a positive integer")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class SimState:
    n: int
    t: float
    rho: np.ndarray
    c: np.ndarray
    fp_iters_last: int = 0


@dataclass(frozen=True)
class Diagnostics:
    t: float
    mass: float
    min: float
    max: float
    entropy: float
    l1_dist: float
    fp_iters: int

    FIELDS = ("t", "mass", "min", "max", "entropy", "l1_dist", "fp_iters")


@dataclass(frozen=True, eq=False)
class Scheme:
    """Everything a step needs, assembled once."""

    mesh: Mesh
    coeff: CoefficientSet
    fracop: FracOperator
    params: SchemeParams
    D: np.ndarray
    K_iso: object
    AK: np.ndarray
    solve_implicit: Callable


def smooth_initial(mesh: Mesh, rho0: Callable, dt: float, normalize: bool = False,
                   K_iso=None) -> np.ndarray:
    """Nodal datum solving ``(D + dt K_iso) rho_h = b`` with ``b_i = int rho0 phi_i``.

    On the non-obtuse structured meshes ``D + dt K_iso`` is an M-matrix, so
    the result stays within the range of the sampled datum.  With
    ``normalize`` the field is rescaled to unit mean.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    D = lumped_weights(mesh)
    K = assemble_stiffness_iso(mesh) if K_iso is None else K_iso
    b = load_vector(mesh, rho0)
    rho = spla.splu((K * dt + sp.diags(D, format="csr")).tocsc()).solve(b)
    if normalize:
        m = D @ rho
        if not m > 0:
            raise ValueError("cannot normalise a datum with nonpositive mass")
        rho *= mesh.domain_area / m
    return rho


def default_delta(mesh: Mesh) -> float:
    return min(1e-3, mesh.h)


def default_L(rho0_h: np.ndarray) -> float:
    return max(2.0 * float(np.max(np.abs(rho0_h))), 2.0)


def prepare(mesh: Mesh, coeff: CoefficientSet, fracop: FracOperator,
            params: SchemeParams, linear_solver: str = "auto") -> Scheme:
    D = lumped_weights(mesh)
    K_iso = assemble_stiffness_iso(mesh)
    S = (sp.diags(D / params.dt, format="csr") + params.mu * K_iso).tocsr()
    if linear_solver == "auto":
        linear_solver = "direct" if mesh.n_vertices <= 200_000 else "cg"
    if linear_solver == "direct":
        solve = spla.splu(S.tocsc()).solve
    else:
        def solve(b):
            return cg_solve(S, b, tol=1e-13)
    AK, _ = coeff.sample(mesh)
    return Scheme(mesh, coeff, fracop, params, D, K_iso, AK, solve)


def pressure(scheme: Scheme, rho: np.ndarray) -> np.ndarray:
    """c = -L^{-s} (beta^L(rho))_diamond."""
    return frac_inverse_apply(scheme.fracop, beta_L(rho, scheme.params.cutoffs.L))


def _picard_map(scheme: Scheme, rho_prev: np.ndarray):
    """rho -> solution of the frozen-coefficient linear problem."""
    p = scheme.params
    cut = p.cutoffs
    base = scheme.D * rho_prev / p.dt

    def G(rho_k):
        c = pressure(scheme, rho_k)
        r = assemble_convection_rhs(scheme.mesh, rho_k, c, cut.delta, cut.L, scheme.coeff,
                                    AK=scheme.AK)
        return scheme.solve_implicit(base + r)
    return G


def _anderson(G, rho_prev, p: SchemeParams):
    counter = [0]

    def F(r):
        counter[0] += 1
        return G(r) - r
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            rho = scipy.optimize.anderson(F, rho_prev, M=ANDERSON_DEPTH, f_tol=p.fp_tol,
                                          maxiter=p.fp_maxiter)
    except (scipy.optimize.NoConvergence, ValueError, FloatingPointError) as exc:
        last = exc.args[0] if exc.args and isinstance(exc.args[0], np.ndarray) else None
        res = float(np.max(np.abs(F(last)))) if last is not None else np.inf
        return None, res, counter[0]
    return rho, 0.0, counter[0]


def step(scheme: Scheme, state: SimState) -> SimState:
    """Advance one implicit Euler step.

    Damped fixed-point iteration comes first: the relaxation factor starts at
    ``params.omega`` and is halved whenever the update norm grows.  If the
    residual blows up or ``fp_maxiter`` is exhausted, the step is restarted
    from the previous state with Anderson mixing on the same map.  Both
    stop on the max-norm of the update, ``fp_tol``.

    Raises
    ------
    ConvergenceError
        When neither iteration reaches ``fp_tol``; reduce dt or omega.
    """
    p = scheme.params
    G = _picard_map(scheme, state.rho)
    rho_k = state.rho.copy()
    omega = p.omega
    prev = np.inf
    first = None
    res = np.inf
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, p.fp_maxiter + 1):
            rho_hat = G(rho_k)
            upd = omega * (rho_hat - rho_k)
            res = float(np.max(np.abs(upd))) / omega
            if not np.isfinite(res) or (first is not None and res > BLOWUP * first):
                break
            first = res if first is None else first
            rho_k = rho_k + upd
            if res <= p.fp_tol:
                c = pressure(scheme, rho_k)
                return SimState(state.n + 1, (state.n + 1) * p.dt, rho_k, c, it)
            if res > prev and omega > MIN_OMEGA:
                omega *= 0.5
            prev = res
    log.info("step %d: fixed-point residual %.3e after %d iterations; switching to Anderson",
             state.n + 1, res, it)
    rho, a_res, evals = _anderson(G, state.rho, p)
    if rho is None:
        raise ConvergenceError(
            f"fixed-point iteration at step {state.n + 1} did not reach {p.fp_tol:g}; "
            "try a smaller dt or omega", residual=a_res, iterations=it + evals)
    c = pressure(scheme, rho)
    return SimState(state.n + 1, (state.n + 1) * p.dt, rho, c, it + evals)


def diagnostics(scheme: Scheme, state: SimState, ref: np.ndarray | None) -> Diagnostics:
    D = scheme.D
    rho = state.rho
    l1 = float(D @ np.abs(rho - ref)) if ref is not None else float("nan")
    return Diagnostics(
        t=state.t,
        mass=float(D @ rho) / scheme.mesh.domain_area,
        min=float(rho.min()),
        max=float(rho.max()),
        entropy=float(D @ entropy_G(np.maximum(rho, 0.0))),
        l1_dist=l1,
        fp_iters=state.fp_iters_last,
    )


@dataclass(frozen=True, eq=False)
class Simulation:
    """A configured run: mesh, operators and the smoothed initial state."""

    config: SimConfig
    scheme: Scheme
    initial: SimState
    reference: str  # "constant" or "successive"

    @property
    def mesh(self) -> Mesh:
        return self.scheme.mesh


def setup(cfg: SimConfig) -> Simulation:
    x0, x1, y0, y1 = cfg.domain
    mesh = build_rect_mesh(x0, x1, y0, y1, cfg.nx, cfg.ny)
    coeff = cfg.coefficients()
    coeff.check(mesh)
    if cfg.mu == 0:
        log.warning("mu = 0 lies outside the analysed regime")
    K_iso = assemble_stiffness_iso(mesh)
    rho0 = smooth_initial(mesh, cfg.rho0(), cfg.dt, normalize=cfg.normalize_mass, K_iso=K_iso)
    delta = default_delta(mesh) if cfg.delta == "auto" else cfg.delta
    L = default_L(rho0) if cfg.L_cutoff == "auto" else cfg.L_cutoff
    sv = cfg.solver
    params = SchemeParams(cfg.dt, cfg.t_final, cfg.mu, CutoffParams(delta, L), cfg.s,
                          sv.fp_tol, sv.fp_maxiter, sv.omega)
    op = build_frac_operator(mesh, coeff, cfg.s, mass=sv.mass, tol=sv.rational_tol,
                             max_degree=sv.max_degree, solver=sv.linear_solver,
                             force=cfg.force)
    scheme = prepare(mesh, coeff, op, params, sv.linear_solver)
    state = SimState(0, 0.0, rho0, pressure(scheme, rho0), 0)
    ref = "constant" if (cfg.normalize_mass and coeff.q_is_zero) else "successive"
    return Simulation(cfg, scheme, state, ref)


def run(sim: SimConfig | Simulation) -> Iterator[tuple]:
    """Yield ``(state, diagnostics)`` after each of the steps 1..N.

    ``l1_dist`` is measured against the unit constant when the datum was
    normalised and Q vanishes, otherwise against the previous step.
    """
    if isinstance(sim, SimConfig):
        sim = setup(sim)
    scheme = sim.scheme
    state = sim.initial
    ones = np.ones_like(state.rho)
    for _ in range(scheme.params.n_steps):
        prev = state.rho
        state = step(scheme, state)
        ref = ones if sim.reference == "constant" else prev
        yield state, diagnostics(scheme, state, ref)


def fit_decay_rate(t, l1, t_start: float, t_end: float) -> float:
    """Least-squares slope of log(l1) against t on [t_start, t_end]."""
    t = np.asarray(t, dtype=float)
    l1 = np.asarray(l1, dtype=float)
    sel = (t >= t_start) & (t <= t_end)
    if sel.sum() < 2:
        raise ValueError("need at least two samples in the fit window")
    if np.any(l1[sel] <= 0) or not np.all(np.isfinite(l1[sel])):
        raise ValueError("l1 distances must be positive and finite on the fit window")
    slope, _ = np.polyfit(t[sel], np.log(l1[sel]), 1)
    return float(slope)
