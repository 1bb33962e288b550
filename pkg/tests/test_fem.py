import numpy as np
import pytest
import scipy.sparse as sp

from shapeopt import forms
from shapeopt.errors import (ConfigurationError, ParameterError, SolverError)
from shapeopt.fem import (TaylorHoodSpace, apply_dirichlet, build_space,
                          dirichlet_data, quadrature, reference_basis,
                          scatter_matrix, solve_linear)
from shapeopt.mesh import ElementGeometry, TriMesh, gen_channel


def one_triangle():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                   np.array([[0, 1, 2]]),
                   np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))


# --------------------------------------------------------------------- spaces

def test_p1_dimension_is_vertex_count():
    mesh = gen_channel(1.0, 1.0, 2, 2)
    assert build_space(mesh, "P1-scalar").dim == 9


def test_taylor_hood_dimension_single_triangle():
    space = TaylorHoodSpace(one_triangle())
    assert space.dim == 2 * 6 + 3  # 2 (3 vertices + 3 edges) + 3


def test_dof_maps_are_deterministic():
    a = build_space(gen_channel(1.0, 1.0, 3, 2), "P2-scalar")
    b = build_space(gen_channel(1.0, 1.0, 3, 2), "P2-scalar")
    assert np.array_equal(a.cell_dofs_scalar, b.cell_dofs_scalar)
    assert np.array_equal(a.edges, b.edges)


def test_interpolation_reproduces_polynomials():
    mesh = gen_channel(1.0, 1.0, 3, 3)
    geo = ElementGeometry(mesh)
    pts, _ = quadrature(2)

    def phys_points(local_pts):
        p0 = mesh.vertices[mesh.triangles[:, 0]]
        return p0[:, None, :] + np.einsum("eab,qb->eqa", geo.jac, local_pts)

    # affine field through P1
    affine = lambda x, y: 2.0 * x - 3.0 * y + 0.25
    f1 = build_space(mesh, "P1-scalar").interpolate(affine)
    vals1, _ = reference_basis(1, pts)
    got = np.einsum("qi,ei->eq", vals1,
                    f1.coefs[f1.space.cell_dofs_scalar])
    xq = phys_points(pts)
    assert np.allclose(got, affine(xq[..., 0], xq[..., 1]), atol=1e-14)

    # quadratic field through P2
    quad = lambda x, y: x * x - 0.5 * x * y + 2.0 * y * y - x + 1.0
    f2 = build_space(mesh, "P2-scalar").interpolate(quad)
    vals2, _ = reference_basis(2, pts)
    got2 = np.einsum("qi,ei->eq", vals2,
                     f2.coefs[f2.space.cell_dofs_scalar])
    assert np.allclose(got2, quad(xq[..., 0], xq[..., 1]), atol=1e-13)


# ----------------------------------------------------------------- quadrature

def test_quadrature_weights_sum_to_reference_area():
    for degree in (2, 4):
        _, w = quadrature(degree)
        assert (w > 0).all()
        assert w.sum() == pytest.approx(0.5, abs=1e-14)


def test_quadrature_degree2_exact_for_xy():
    pts, w = quadrature(2)
    assert (w * pts[:, 0] * pts[:, 1]).sum() == pytest.approx(1.0 / 24.0,
                                                              abs=1e-15)


def test_quadrature_degree4_exact_for_x4():
    pts, w = quadrature(4)
    assert (w * pts[:, 0] ** 4).sum() == pytest.approx(1.0 / 30.0, abs=1e-14)


def test_quadrature_unsupported_degree():
    with pytest.raises(ParameterError):
        quadrature(3)


# ------------------------------------------------------------------- assembly

def mass_matrix(mesh, space):
    geo = ElementGeometry(mesh)
    pts, w = quadrature(2)
    vals, _ = reference_basis(space.degree, pts)
    wdet = w[None, :] * geo.det[:, None]
    loc = np.einsum("eq,qi,qj->eij", wdet, vals, vals)
    return scatter_matrix(space.dim, space.dim, space.cell_dofs_scalar,
                          space.cell_dofs_scalar, loc)


def stiffness_matrix(mesh, space):
    geo = ElementGeometry(mesh)
    pts, w = quadrature(2)
    _, grads = reference_basis(space.degree, pts)
    phys = np.einsum("ekm,qim->eqik", geo.inv_t, grads)
    wdet = w[None, :] * geo.det[:, None]
    loc = np.einsum("eq,eqik,eqjk->eij", wdet, phys, phys)
    return scatter_matrix(space.dim, space.dim, space.cell_dofs_scalar,
                          space.cell_dofs_scalar, loc)


def test_p1_mass_matrix_unit_right_triangle():
    mesh = one_triangle()
    m = mass_matrix(mesh, build_space(mesh, "P1-scalar")).toarray()
    # exact integration oracle: diag 1/12, off-diagonal 1/24
    expected = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0],
                         [1.0, 1.0, 2.0]]) / 24.0
    assert np.allclose(m, expected, atol=1e-15)


def test_p1_stiffness_unit_right_triangle():
    mesh = one_triangle()
    k = stiffness_matrix(mesh, build_space(mesh, "P1-scalar")).toarray()
    expected = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0],
                               [-1.0, 0.0, 1.0]])
    assert np.allclose(k, expected, atol=1e-15)


def test_matrices_are_symmetric():
    mesh = gen_channel(1.3, 0.8, 4, 3)
    for space in (build_space(mesh, "P1-scalar"),
                  build_space(mesh, "P2-scalar")):
        for mat in (mass_matrix(mesh, space), stiffness_matrix(mesh, space)):
            a = mat.toarray()
            assert np.abs(a - a.T).max() <= 1e-13 * np.abs(a).max()


def test_assembly_invariant_under_triangle_reordering():
    mesh = gen_channel(1.0, 1.0, 3, 3)
    order = np.random.default_rng(1).permutation(mesh.n_triangles)
    shuffled = TriMesh(mesh.vertices, mesh.triangles[order],
                       mesh.boundary_edges, mesh.edge_markers)
    a = stiffness_matrix(mesh, build_space(mesh, "P1-scalar")).toarray()
    b = stiffness_matrix(shuffled,
                         build_space(shuffled, "P1-scalar")).toarray()
    assert np.abs(a - b).max() <= 1e-13 * np.abs(a).max()


def test_volume_form_on_unit_square():
    mesh = gen_channel(1.0, 1.0, 4, 4)
    vol = forms.assemble_value(forms.FormExpr([(1.0, forms.VolumeOne())]),
                               mesh, {})
    assert vol == pytest.approx(1.0, abs=1e-14)


# ------------------------------------------------------------------ dirichlet

def test_homogeneous_dirichlet_gives_zero():
    mesh = gen_channel(1.0, 1.0, 3, 3)
    space = build_space(mesh, "P1-scalar")
    k = stiffness_matrix(mesh, space)
    rhs = np.zeros(space.dim)
    bcs = {m: 0.0 for m in sorted(mesh.marker_set())}
    a, b = apply_dirichlet(k, rhs, bcs, space)
    assert np.allclose(solve_linear(a, b), 0.0)


def test_laplace_linear_interpolant():
    # u=0 on x=0, u=1 on x=2, natural walls: discrete solution is x/2
    mesh = gen_channel(2.0, 1.0, 2, 2)
    space = build_space(mesh, "P1-scalar")
    k = stiffness_matrix(mesh, space)
    a, b = apply_dirichlet(k, np.zeros(space.dim), {10: 0.0, 11: 1.0}, space)
    u = solve_linear(a, b)
    assert np.allclose(u, 0.5 * space.dof_coords[:, 0], atol=1e-12)


def test_poiseuille_interpolation_peaks_at_midline():
    mesh = gen_channel(1.0, 1.0, 4, 4)  # height 1 centered at y = 0
    space = build_space(mesh, "P2-vector2")

    def profile(x, y):
        return np.stack([1.0 - 4.0 * y ** 2, np.zeros_like(y)])

    dofs, vals = dirichlet_data(space, {10: profile})
    coords = space.dof_coords[dofs[0::2] // 2]
    mid = np.isclose(coords[:, 1], 0.0)
    assert np.allclose(vals[0::2][mid], 1.0)
    walls = np.isclose(np.abs(coords[:, 1]), 0.5)
    assert np.allclose(vals[0::2][walls], 0.0)


def test_dirichlet_unknown_marker():
    mesh = gen_channel(1.0, 1.0, 2, 2)
    space = build_space(mesh, "P1-scalar")
    k = stiffness_matrix(mesh, space)
    with pytest.raises(ConfigurationError):
        apply_dirichlet(k, np.zeros(space.dim), {99: 0.0}, space)


# --------------------------------------------------------------- linear solve

def test_solve_identity():
    b = np.array([3.0, -1.0, 2.0])
    x = solve_linear(sp.identity(3, format="csr"), b)
    assert np.allclose(x, b)


def test_solve_spd_2x2_hand_oracle():
    a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    x = solve_linear(a, np.array([1.0, 1.0]))
    assert np.allclose(x, [1.0 / 3.0, 1.0 / 3.0], atol=1e-14)


def test_solve_zero_matrix_errors():
    with pytest.raises(SolverError):
        solve_linear(sp.csr_matrix((2, 2)), np.array([1.0, 0.0]))


def test_solver_error_carries_residual_contract():
    # nearly singular matrix: spsolve returns a huge, inaccurate solution
    a = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-16]]))
    with pytest.raises(SolverError):
        solve_linear(a, np.array([1.0, 2.0]))
