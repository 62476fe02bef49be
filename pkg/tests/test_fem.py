import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fracpm import cutoffs as co
from fracpm.errors import ConvergenceError
from fracpm.fem import (assemble_convection_rhs, assemble_mass_consistent, assemble_mass_lumped,
                        assemble_Q_mass, assemble_stiffness_A, assemble_stiffness_iso,
                        assemble_stiffness_split, cg_solve, load_vector, lumped_weights,
                        make_coefficients)
from fracpm.mesh import build_rect_mesh, element_geometry

SQUARE = build_rect_mesh(0, 1, 0, 1, 1, 1)
# vertex order: (0,0), (1,0), (0,1), (1,1)
K_HAND = np.array([[1.0, -0.5, -0.5, 0.0],
                   [-0.5, 1.0, 0.0, -0.5],
                   [-0.5, 0.0, 1.0, -0.5],
                   [0.0, -0.5, -0.5, 1.0]])
M_HAND = np.array([[4, 1, 1, 2],
                   [1, 2, 0, 1],
                   [1, 0, 2, 1],
                   [2, 1, 1, 4]]) / 24.0


def _brute_stiffness(mesh, coeff):
    """Dense stiffness from a plain loop over elements."""
    K = np.zeros((mesh.n_vertices,) * 2)
    for k, tri in enumerate(mesh.triangles):
        g = element_geometry(mesh, k)
        bx, by = mesh.vertices[tri].mean(axis=0)
        A = np.asarray(coeff.A(np.array(bx), np.array(by)))
        Q = float(coeff.Q(np.array(bx), np.array(by)))
        for a in range(3):
            for b in range(3):
                K[tri[a], tri[b]] += g.area * g.grad_basis[b] @ A @ g.grad_basis[a]
                K[tri[a], tri[b]] += Q * g.area * (2.0 if a == b else 1.0) / 12.0
    return K


def _brute_convection(mesh, rho, c, p, coeff):
    out = np.zeros(mesh.n_vertices)
    for k, tri in enumerate(mesh.triangles):
        g = element_geometry(mesh, k)
        bx, by = mesh.vertices[tri].mean(axis=0)
        A = np.asarray(coeff.A(np.array(bx), np.array(by)))
        th = co.theta_element(rho[tri], g, p).theta
        flux = th @ A @ (g.grad_basis.T @ c[tri])
        for a in range(3):
            out[tri[a]] += g.area * flux @ g.grad_basis[a]
    return out


def test_hand_assembled_laplacian():
    K = assemble_stiffness_iso(SQUARE).toarray()
    np.testing.assert_allclose(K, K_HAND, atol=1e-15)
    assert K[0, 0] == 1.0


def test_hand_assembled_mass():
    M = assemble_mass_consistent(SQUARE)
    np.testing.assert_allclose(M.toarray(), M_HAND, atol=1e-16)
    assert (M - M.T).nnz == 0
    np.testing.assert_allclose(assemble_mass_lumped(SQUARE).diagonal(), [1 / 3, 1 / 6, 1 / 6, 1 / 3])


@pytest.mark.parametrize("A", [("identity",), ("diag", 10.0, 0.1), ("diag", 0.1, 10.0)])
@pytest.mark.parametrize("Q", [("zero",), ("quadratic", 100.0), ("step", 100.0, 1.0)])
def test_assembly_matches_element_loop(A, Q):
    m = build_rect_mesh(-2, 2, -2, 2, 4, 3)
    coeff = make_coefficients(A, Q)
    K = assemble_stiffness_A(m, coeff) + assemble_Q_mass(m, coeff)
    np.testing.assert_allclose(K.toarray(), _brute_stiffness(m, coeff), rtol=1e-13, atol=1e-13)


def test_anisotropic_equals_split_combination():
    m = build_rect_mesh(-2, 2, -2, 2, 8, 8)
    Kxx, Kyy = assemble_stiffness_split(m)
    K = assemble_stiffness_A(m, make_coefficients(("diag", 10.0, 0.1)))
    np.testing.assert_allclose(K.toarray(), (10 * Kxx + 0.1 * Kyy).toarray(), atol=1e-13)
    np.testing.assert_allclose((Kxx + Kyy).toarray(), assemble_stiffness_iso(m).toarray(), atol=1e-13)


def test_row_sums_and_symmetry():
    m = build_rect_mesh(-2, 2, -2, 2, 7, 5)
    for A in (("identity",), ("diag", 10.0, 0.1)):
        K = assemble_stiffness_A(m, make_coefficients(A))
        assert np.abs(K @ np.ones(m.n_vertices)).max() <= 1e-10 * np.abs(K.data).max()
        assert abs(K - K.T).max() <= 1e-14


def test_mass_totals():
    for n in (1, 3, 16):
        m = build_rect_mesh(-2, 2, -2, 2, n, n)
        assert assemble_mass_consistent(m).sum() == pytest.approx(16.0, rel=1e-14)
        D = lumped_weights(m)
        assert D.sum() == pytest.approx(16.0, rel=1e-14)
        assert np.all(D > 0)
        # lumped and consistent masses agree on constants
        one = np.ones(m.n_vertices)
        assert one @ assemble_mass_consistent(m) @ one == pytest.approx(one @ (D * one), rel=1e-14)
        assert D.sum() >= assemble_mass_consistent(m).diagonal().sum()


def test_interior_lumped_weight_is_cell_area():
    m = build_rect_mesh(0, 3, 0, 2, 6, 4)
    a = (3 / 6) * (2 / 4)
    D = lumped_weights(m)
    assert D[m.vertex_index(2, 2)] == pytest.approx(a, rel=1e-14)


def test_Q_mass_special_cases():
    m = build_rect_mesh(-2, 2, -2, 2, 6, 6)
    assert assemble_Q_mass(m, make_coefficients()).nnz == 0
    MQ = assemble_Q_mass(m, make_coefficients(Q_spec=("const", 1.0)))
    np.testing.assert_allclose(MQ.toarray(), assemble_mass_consistent(m).toarray(), atol=1e-15)


def test_first_neumann_eigenvalue():
    m = build_rect_mesh(-2, 2, -2, 2, 16, 16)
    lam = scipy.linalg.eigh(assemble_stiffness_iso(m).toarray(),
                            assemble_mass_consistent(m).toarray(), eigvals_only=True)
    assert lam[0] == pytest.approx(0.0, abs=1e-10)
    assert lam[1] == pytest.approx(np.pi ** 2 / 16, rel=0.01)


def test_ellipticity_transfer():
    m = build_rect_mesh(-2, 2, -2, 2, 8, 8)
    coeff = make_coefficients(("diag", 10.0, 0.1))
    KA, Ki = assemble_stiffness_A(m, coeff), assemble_stiffness_iso(m)
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.standard_normal(m.n_vertices)
        v -= v.mean()
        a, i = v @ KA @ v, v @ Ki @ v
        assert coeff.Lambda1 * i <= a * (1 + 1e-12) and a <= coeff.Lambda2 * i * (1 + 1e-12)


def test_coefficient_checks():
    m = build_rect_mesh(-2, 2, -2, 2, 4, 4)
    make_coefficients(("diag", 10.0, 0.1), ("quadratic", 100.0)).check(m)
    with pytest.raises(ValueError):
        make_coefficients(("diag", -1.0, 1.0))
    with pytest.raises(ValueError):
        make_coefficients(("bogus",))
    with pytest.raises(ValueError):
        make_coefficients(Q_spec=("const", -1.0))
    bad = make_coefficients(Q_spec=("const", 1.0))
    lie = type(bad)(bad.A, bad.Q, 1.0, 1.0, True)
    with pytest.raises(ValueError):
        lie.check(m)
    narrow = type(bad)(make_coefficients(("diag", 10.0, 0.1)).A, bad.Q, 1.0, 2.0, False)
    with pytest.raises(ValueError):
        narrow.check(m)


def test_load_vector_exact_for_linear_and_quadratic():
    m = build_rect_mesh(-2, 2, -2, 2, 5, 7)

    def lin(x, y):
        return 1.0 + 2.0 * x - 0.5 * y
    b = load_vector(m, lin)
    f = lin(m.vertices[:, 0], m.vertices[:, 1])
    np.testing.assert_allclose(b, assemble_mass_consistent(m) @ f, rtol=1e-13, atol=1e-14)
    # integral of x^2 over the square is 64/3
    assert load_vector(m, lambda x, y: x ** 2).sum() == pytest.approx(64 / 3, rel=1e-13)


def test_convection_zero_for_constant_pressure():
    m = build_rect_mesh(-2, 2, -2, 2, 6, 6)
    rho = np.random.default_rng(1).uniform(0, 2, m.n_vertices)
    r = assemble_convection_rhs(m, rho, np.full(m.n_vertices, 3.0), 1e-3, 4.0, make_coefficients())
    assert np.abs(r).max() <= 1e-13


def test_convection_constant_density_is_scaled_stiffness():
    m = build_rect_mesh(-2, 2, -2, 2, 6, 6)
    coeff = make_coefficients(("diag", 10.0, 0.1))
    c = np.random.default_rng(2).standard_normal(m.n_vertices)
    for r0 in (0.5, 1.7):
        r = assemble_convection_rhs(m, np.full(m.n_vertices, r0), c, 0.1, 2.0, coeff)
        np.testing.assert_allclose(r, r0 * (assemble_stiffness_A(m, coeff) @ c), rtol=1e-12, atol=1e-12)


def test_convection_rows_sum_to_zero():
    m = build_rect_mesh(-2, 2, -2, 2, 9, 9)
    rng = np.random.default_rng(3)
    r = assemble_convection_rhs(m, rng.uniform(-0.5, 3, m.n_vertices),
                                rng.standard_normal(m.n_vertices), 1e-3, 2.0,
                                make_coefficients(("diag", 10.0, 0.1)))
    assert abs(r.sum()) <= 1e-12 * np.abs(r).sum()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31),
       st.floats(1e-3, 0.5), st.floats(1.5, 8))
def test_convection_matches_element_loop(nx, ny, seed, delta, L):
    m = build_rect_mesh(-1, 2, -2, 1, nx, ny)
    coeff = make_coefficients(("diag", 3.0, 0.2))
    rng = np.random.default_rng(seed)
    rho = rng.uniform(-1, 10, m.n_vertices)
    rho[rng.random(m.n_vertices) < 0.3] = 1.0  # exercise the equal-value branch
    c = rng.standard_normal(m.n_vertices)
    p = co.CutoffParams(delta, L)
    got = assemble_convection_rhs(m, rho, c, delta, L, coeff)
    want = _brute_convection(m, rho, c, p, coeff)
    np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-11 * np.abs(want).max())


def test_convection_argument_checks():
    m = build_rect_mesh(0, 1, 0, 1, 2, 2)
    z = np.zeros(m.n_vertices)
    with pytest.raises(ValueError):
        assemble_convection_rhs(m, z, z, 1.5, 2.0, make_coefficients())
    with pytest.raises(ValueError):
        assemble_convection_rhs(m, z[:-1], z, 0.1, 2.0, make_coefficients())


def test_theta_convection_approaches_beta_version_under_refinement():
    coeff = make_coefficients(("diag", 10.0, 0.1))

    def gap(n):
        m = build_rect_mesh(-2, 2, -2, 2, n, n)
        x, y = m.vertices.T
        rho = 1.0 + 0.5 * np.sin(x) * np.cos(y)
        c = np.cos(0.7 * x) + 0.3 * y ** 2
        delta = min(1e-3, m.h)
        r = assemble_convection_rhs(m, rho, c, delta, 4.0, coeff)
        # beta(rho(barycenter)) * I in place of Theta
        AK, _ = coeff.sample(m)
        bK = co.beta_delta_L(rho[m.triangles].mean(axis=1), co.CutoffParams(delta, 4.0))
        gc = np.einsum("kja,kj->ka", m.grad_basis, c[m.triangles])
        flux = bK[:, None] * np.einsum("kab,kb->ka", AK, gc)
        contrib = m.area[:, None] * np.einsum("ka,kja->kj", flux, m.grad_basis)
        rb = np.bincount(m.triangles.ravel(), contrib.ravel(), minlength=m.n_vertices)
        return np.abs(r - rb).sum() / np.abs(rb).sum()

    g = [gap(n) for n in (8, 16, 32, 64)]
    assert all(b < a for a, b in zip(g, g[1:]))
    assert g[-1] < 0.25 * g[0]


def test_cg_trivial_systems():
    eye = sp.identity(3, format="csr")
    np.testing.assert_allclose(cg_solve(eye, [1.0, 2.0, 3.0]), [1, 2, 3])
    x, info = cg_solve(sp.diags([2.0, 2.0]), np.array([4.0, 6.0]), return_info=True)
    np.testing.assert_allclose(x, [2.0, 3.0])
    assert info.residual <= 1e-10
    np.testing.assert_array_equal(cg_solve(eye, np.zeros(3)), 0.0)


def test_cg_matches_dense_lu():
    S = (assemble_mass_lumped(SQUARE) + 0.05 * assemble_stiffness_iso(SQUARE)).tocsr()
    b = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(cg_solve(S, b, tol=1e-13), scipy.linalg.lu_solve(
        scipy.linalg.lu_factor(S.toarray()), b), rtol=1e-10)


def test_cg_deflation_on_singular_stiffness():
    m = build_rect_mesh(-2, 2, -2, 2, 8, 8)
    K = assemble_stiffness_iso(m)
    b = np.random.default_rng(4).standard_normal(m.n_vertices)
    x = cg_solve(K, b, tol=1e-10, deflate_constants=True)
    bp = b - b.mean()
    assert np.linalg.norm(K @ x - bp) <= 1e-9 * np.linalg.norm(bp)
    assert abs(x.mean()) <= 1e-12


def test_cg_reports_failure():
    m = build_rect_mesh(-2, 2, -2, 2, 16, 16)
    K = (assemble_stiffness_iso(m) + 1e-3 * assemble_mass_consistent(m)).tocsr()
    with pytest.raises(ConvergenceError) as exc:
        cg_solve(K, np.random.default_rng(5).standard_normal(m.n_vertices), tol=1e-12, maxiter=3)
    assert exc.value.residual > 1e-12
    assert exc.value.iterations == 3
    assert "residual" in str(exc.value)


def test_cg_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        cg_solve(sp.identity(3, format="csr"), np.ones(2))
