"""Self-checks of the library invariants, run by ``fracpm validate``.

Each check returns ``(ok, detail)``.  The ``fast`` level uses coarse meshes
and finishes in seconds; ``full`` adds larger meshes and short runs.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import cutoffs as co
from .config import load_bundled
from .fem import (assemble_convection_rhs, assemble_mass_consistent, assemble_mass_lumped,
                  assemble_stiffness_A, assemble_stiffness_iso, cg_solve, make_coefficients)
from .fracop import (build_frac_operator, dense_eigenpairs, frac_inverse_apply,
                     frac_inverse_dense_oracle)
from .mesh import build_rect_mesh, element_angles, geometry_from_points, quality_ratio
from .stepper import run, setup


@dataclass(frozen=True)
class Check:
    name: str
    level: str
    func: Callable


def _mesh_invariants(nx=16):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    area_err = abs(m.area.sum() - m.domain_area) / m.domain_area
    max_angle = element_angles(m).max()
    pu = np.abs(m.grad_basis.sum(axis=1)).max()
    q = quality_ratio(m)
    ok = area_err <= 1e-12 and max_angle <= np.pi / 2 + 1e-12 and pu <= 1e-12 and q <= 10
    return ok, f"area err {area_err:.1e}, max angle {np.degrees(max_angle):.6f} deg, quality {q:.2f}"


def _assembly(nx=8):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    worst = 0.0
    for a in (("identity",), ("diag", 10.0, 0.1)):
        K = assemble_stiffness_A(m, make_coefficients(a))
        worst = max(worst, np.abs(K @ np.ones(m.n_vertices)).max() / np.abs(K.data).max())
    M = assemble_mass_consistent(m)
    D = assemble_mass_lumped(m)
    ok = worst <= 1e-10 and abs(M.sum() - 16) <= 1e-12 and abs(D.diagonal().sum() - 16) <= 1e-12
    return ok, f"max relative row sum {worst:.1e}, mass totals {M.sum():.15g}, {D.sum():.15g}"


def _cutoff_identities(n=10_000, seed=0):
    p = co.CutoffParams(0.1, 2.0)
    s = np.concatenate([np.linspace(-3, 5, n), [p.delta, p.L]])
    ident = np.abs(co.beta_delta_L(s, p) * co.ddG_reg(s, p) - 1).max()
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 4, (2, n))
    tt = co.theta_tilde_entries(a, b, p)
    in_range = bool(np.all((tt >= p.delta) & (tt <= p.L)))
    ok = ident <= 1e-14 and in_range
    return ok, f"beta * G'' - 1 max {ident:.1e}, theta-tilde in [delta, L]: {in_range}"


def _propfe1(n=200, seed=1):
    rng = np.random.default_rng(seed)
    p = co.CutoffParams(1e-3, 5.0)
    worst = 0.0
    for _ in range(n):
        P = rng.uniform(-1, 1, (3, 2))
        geo = geometry_from_points(P)
        if geo.area < 1e-3:
            continue
        phi = rng.uniform(-0.5, 6, 3)
        th = co.theta_element(phi, geo, p)
        lhs = th.theta @ co.p1_gradient(co.dG_reg(phi, p), geo)
        rhs = co.p1_gradient(phi, geo)
        worst = max(worst, np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max()))
    return worst <= 1e-12, f"max relative defect {worst:.1e}"


def _convection_constant(nx=8):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    coeff = make_coefficients(("diag", 10.0, 0.1))
    rng = np.random.default_rng(2)
    c = rng.standard_normal(m.n_vertices)
    r = assemble_convection_rhs(m, np.full(m.n_vertices, 0.7), c, 0.1, 2.0, coeff)
    ref = 0.7 * (assemble_stiffness_A(m, coeff) @ c)
    err = np.abs(r - ref).max() / np.abs(ref).max()
    return err <= 1e-12, f"relative deviation {err:.1e}"


def _cg(nx=8):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    A = (assemble_mass_lumped(m) + 0.1 * assemble_stiffness_iso(m)).tocsr()
    b = np.random.default_rng(3).standard_normal(m.n_vertices)
    x = cg_solve(A, b, tol=1e-12)
    ref = np.linalg.solve(A.toarray(), b)
    err = np.abs(x - ref).max() / np.abs(ref).max()
    return err <= 1e-10, f"relative error vs dense solve {err:.1e}"


def _frac_oracle(nx=8):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    worst = 0.0
    rng = np.random.default_rng(4)
    for a, q in [(("identity",), ("zero",)), (("diag", 10.0, 0.1), ("quadratic", 100.0)),
                 (("identity",), ("step", 100.0, 1.0))]:
        op = build_frac_operator(m, make_coefficients(a, q), 0.75)
        eig = dense_eigenpairs(op)
        for _ in range(3):
            f = rng.standard_normal(m.n_vertices)
            x, y = frac_inverse_apply(op, f), frac_inverse_dense_oracle(op, f, eig)
            d = x - y
            worst = max(worst, np.sqrt(d @ (op.M @ d) / (y @ (op.M @ y))))
    return worst <= 1e-7, f"max relative M-norm discrepancy {worst:.1e}"


def _eigenvalue(nx=32):
    m = build_rect_mesh(-2, 2, -2, 2, nx, nx)
    op = build_frac_operator(m, make_coefficients(), 0.75)
    rel = abs(op.lam_lo / (np.pi ** 2 / 16) - 1)
    return rel <= 0.01, f"lambda_lo = {op.lam_lo:.6f}, relative gap to pi^2/16 {rel:.2e}"


def _short_run(name="experiment_I", nx=16, t_final=0.2):
    cfg = load_bundled(name).override(nx=nx, ny=nx, t_final=t_final)
    sim = setup(cfg)
    m0 = sim.scheme.D @ sim.initial.rho
    drift = 0.0
    for st, _ in run(sim):
        drift = max(drift, abs(sim.scheme.D @ st.rho - m0) / m0)
    return drift <= 1e-9, f"{name}: max relative mass drift {drift:.1e}"


CHECKS = [
    Check("mesh invariants", "fast", _mesh_invariants),
    Check("stiffness row sums and mass totals", "fast", _assembly),
    Check("cut-off identities", "fast", _cutoff_identities),
    Check("Theta gradient identity", "fast", _propfe1),
    Check("convection with constant density", "fast", _convection_constant),
    Check("CG vs dense solve", "fast", _cg),
    Check("fractional apply vs dense oracle", "fast", _frac_oracle),
    Check("short run mass conservation", "fast", _short_run),
    Check("smallest eigenvalue", "full", _eigenvalue),
    Check("fractional apply vs oracle, finer mesh", "full", lambda: _frac_oracle(24)),
    Check("short run, experiment II", "full", lambda: _short_run("experiment_II", 32, 0.2)),
    Check("short run, decay preset", "full", lambda: _short_run("decay_Q0", 32, 0.1)),
]


def run_checks(level: str = "fast", report=print) -> bool:
    """Run the checks of ``level`` (``full`` includes ``fast``); True if all pass."""
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    all_ok = True
    for chk in CHECKS:
        if level == "fast" and chk.level != "fast":
            continue
        try:
            ok, detail = chk.func()
        except Exception as exc:  # a crash counts as a failure and is reported
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        report(f"{'PASS' if ok else 'FAIL'}  {chk.name}: {detail}")
    return all_ok
