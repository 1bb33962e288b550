import numpy as np
import pytest

from shapeopt.errors import InputShapeError, ParameterError
from shapeopt.mesh import (TriMesh, deform, det_ratios, gen_cantilever,
                           gen_channel, quality, signed_areas)


def unit_square(nx=2, ny=2):
    return gen_channel(1.0, 1.0, nx, ny)


def test_deform_zero_is_identity():
    mesh = unit_square()
    out = deform(mesh, np.zeros((mesh.n_vertices, 2)))
    assert np.array_equal(out.vertices, mesh.vertices)
    assert np.array_equal(out.triangles, mesh.triangles)
    assert np.array_equal(out.boundary_edges, mesh.boundary_edges)
    assert np.array_equal(out.edge_markers, mesh.edge_markers)


def test_deform_affine_stretch():
    mesh = unit_square()
    disp = np.column_stack([mesh.vertices[:, 0],
                            np.zeros(mesh.n_vertices)])
    out = deform(mesh, disp)
    src = np.argmin(np.abs(mesh.vertices - [1.0, 0.5]).sum(axis=1))
    assert np.allclose(out.vertices[src], [2.0, 0.5])


def test_deform_shape_error():
    mesh = unit_square()
    with pytest.raises(InputShapeError):
        deform(mesh, np.zeros((mesh.n_vertices - 1, 2)))


def test_deform_composes_additively():
    rng = np.random.default_rng(3)
    mesh = unit_square(3, 3)
    v = 0.05 * rng.standard_normal((mesh.n_vertices, 2))
    w = 0.05 * rng.standard_normal((mesh.n_vertices, 2))
    a = deform(deform(mesh, v), w)
    b = deform(mesh, v + w)
    assert np.allclose(a.vertices, b.vertices, atol=1e-15)


def test_quality_identity_and_stretch():
    mesh = unit_square()
    zero = np.zeros((mesh.n_vertices, 2))
    assert quality(mesh, zero).min_det_ratio == pytest.approx(1.0)
    stretch = np.column_stack([mesh.vertices[:, 0], np.zeros(mesh.n_vertices)])
    rep = quality(mesh, stretch)
    assert rep.min_det_ratio == pytest.approx(2.0)
    ratios = det_ratios(mesh, stretch)
    assert np.allclose(ratios, 2.0)


def test_quality_half_area_triangle():
    # move (0,1) onto (0.5, 0.5): deformed/original area = 0.5
    mesh = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                   np.array([[0, 1, 2]]),
                   np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))
    disp = np.zeros((3, 2))
    disp[2] = [0.5, -0.5]
    assert quality(mesh, disp).min_det_ratio == pytest.approx(0.5)


def test_quality_detects_tangling():
    mesh = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                   np.array([[0, 1, 2]]),
                   np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))
    disp = np.zeros((3, 2))
    disp[2] = [0.5, -1.5]  # vertex crosses the opposite edge
    assert quality(mesh, disp).min_det_ratio <= 0.0


def test_quality_invariant_under_rigid_translation():
    mesh = unit_square(3, 2)
    shift = np.tile([0.37, -1.2], (mesh.n_vertices, 1))
    rep = quality(mesh, shift)
    assert rep.min_det_ratio == pytest.approx(1.0, abs=1e-13)
    assert rep.max_displacement_gradient == pytest.approx(0.0, abs=1e-12)


def test_gen_channel_counting_oracle():
    # structured 2-triangle-per-cell pattern:
    # (nx+1)(ny+1) vertices, 2 nx ny triangles, 2 (nx+ny) boundary edges
    mesh = gen_channel(1.0, 1.0, 2, 2)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert len(mesh.boundary_edges) == 8


def test_gen_markers_on_left_edge():
    chan = gen_channel(2.0, 1.0, 3, 2)
    left = chan.edge_markers[np.isclose(
        chan.vertices[chan.boundary_edges].mean(axis=1)[:, 0], 0.0)]
    assert set(left) == {10}
    cant = gen_cantilever(2.0, 1.0, 3, 2)
    left = cant.edge_markers[np.isclose(
        cant.vertices[cant.boundary_edges].mean(axis=1)[:, 0], 0.0)]
    assert set(left) == {1}


def test_gen_channel_marker_sets():
    assert gen_channel(1.0, 1.0, 2, 2).marker_set() == {10, 11, 12, 13}
    assert gen_cantilever(1.0, 1.0, 2, 2).marker_set() == {1, 2, 3}


def test_boundary_edge_lengths_sum_to_perimeter():
    mesh = gen_channel(3.0, 1.5, 4, 3)
    pts = mesh.vertices[mesh.boundary_edges]
    lengths = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
    assert lengths.sum() == pytest.approx(2 * (3.0 + 1.5))


def test_gen_channel_bend_preserves_area_and_counts():
    straight = gen_channel(2.0, 1.0, 8, 4)
    bent = gen_channel(2.0, 1.0, 8, 4, bend=0.4)
    assert bent.n_triangles == straight.n_triangles
    assert bent.volume() == pytest.approx(straight.volume(), rel=1e-14)
    assert np.array_equal(bent.edge_markers, straight.edge_markers)


def test_gen_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        gen_channel(-1.0, 1.0, 2, 2)
    with pytest.raises(ParameterError):
        gen_channel(1.0, 1.0, 1, 2)
    with pytest.raises(ParameterError):
        gen_cantilever(1.0, 0.0, 2, 2)


def test_constructor_orients_counterclockwise():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = TriMesh(verts, np.array([[0, 2, 1]]),  # clockwise input
                   np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))
    assert signed_areas(mesh.vertices, mesh.triangles)[0] > 0


def test_constructor_rejects_degenerate_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ParameterError):
        TriMesh(verts, np.array([[0, 1, 2]]), np.zeros((0, 2), dtype=int),
                np.zeros(0, dtype=int))


def test_constructor_rejects_interior_boundary_edge():
    mesh = unit_square()
    interior = None
    count = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    interior = next(k for k, v in count.items() if v == 2)
    with pytest.raises(ParameterError):
        TriMesh(mesh.vertices, mesh.triangles, np.array([interior]),
                np.array([5]))


def test_mesh_is_immutable():
    mesh = unit_square()
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 99.0
