"""Unstructured 2D triangular meshes: representation, deformation, quality.

A :class:`TriMesh` is the discrete domain. Shapes are explored by moving
vertices while keeping the connectivity fixed, so :func:`deform` returns a
new mesh with identical triangles/edges/markers and displaced vertices.
:func:`quality` measures how far a displacement is from tangling the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputShapeError, ParameterError


class TriMesh:
    """Triangulation with marked boundary edges.

    Parameters
    ----------
    vertices : (n_vertices, 2) float array
        Vertex coordinates.
    triangles : (n_triangles, 3) int array
        Vertex index triples. Triangles handed to the constructor are
        re-oriented counterclockwise (positive signed area) when needed.
    boundary_edges : (n_edges, 2) int array
        Vertex pairs lying on the boundary.
    edge_markers : (n_edges,) int array
        One nonnegative marker per boundary edge.

    Notes
    -----
    Instances are immutable; all derived meshes are new objects. Meshes
    produced by :func:`deform` skip re-orientation and re-validation on
    purpose: a deformation may tangle elements, and downstream quality
    guards must be able to see that.
    """

    def __init__(self, vertices, triangles, boundary_edges, edge_markers,
                 _validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        self.edge_markers = np.ascontiguousarray(edge_markers, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise InputShapeError("vertices must have shape (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InputShapeError("triangles must have shape (n, 3)")
        self.boundary_edges = self.boundary_edges.reshape(-1, 2)
        if self.edge_markers.shape != (len(self.boundary_edges),):
            raise InputShapeError("need exactly one marker per boundary edge")
        if _validate:
            self._orient_and_check()
        for arr in (self.vertices, self.triangles, self.boundary_edges,
                    self.edge_markers):
            arr.setflags(write=False)

    def _orient_and_check(self):
        nv = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= nv):
            raise ParameterError("triangle references a vertex out of range")
        if self.boundary_edges.size and (self.boundary_edges.min() < 0
                                         or self.boundary_edges.max() >= nv):
            raise ParameterError("boundary edge references a vertex out of range")
        area = signed_areas(self.vertices, self.triangles)
        flip = area < 0.0
        if flip.any():
            tri = self.triangles.copy()
            tri[flip] = tri[flip][:, [0, 2, 1]]
            self.triangles = tri
            area = np.abs(area)
        if (area <= 0.0).any():
            bad = int(np.argmin(area))
            raise ParameterError(f"triangle {bad} has zero signed area")
        if (self.edge_markers < 0).any():
            raise ParameterError("boundary markers must be nonnegative")
        # every marked edge must occur in exactly one triangle
        count = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
        for a, b in self.boundary_edges:
            key = (min(a, b), max(a, b))
            if count.get(key, 0) != 1:
                raise ParameterError(
                    f"boundary edge ({a}, {b}) is shared by "
                    f"{count.get(key, 0)} triangles, expected exactly 1")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def marker_set(self):
        """Distinct boundary markers present on this mesh."""
        return set(int(m) for m in np.unique(self.edge_markers))

    def volume(self):
        """Total area (sum of triangle areas)."""
        return float(signed_areas(self.vertices, self.triangles).sum())


def signed_areas(vertices, triangles):
    """Signed area of each triangle (positive for counterclockwise)."""
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    e1 = p1 - p0
    e2 = p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


class ElementGeometry:
    """Per-triangle affine reference map data.

    ``jac[e]`` maps the reference triangle (0,0)-(1,0)-(0,1) onto element
    ``e``; its columns are the two edge vectors from the first vertex.
    ``det`` is twice the element area and ``inv_t`` the inverse transpose
    used to push reference gradients to physical gradients.
    """

    def __init__(self, mesh: TriMesh):
        p0 = mesh.vertices[mesh.triangles[:, 0]]
        p1 = mesh.vertices[mesh.triangles[:, 1]]
        p2 = mesh.vertices[mesh.triangles[:, 2]]
        jac = np.empty((mesh.n_triangles, 2, 2))
        jac[:, :, 0] = p1 - p0
        jac[:, :, 1] = p2 - p0
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if (det <= 0.0).any():
            bad = int(np.argmin(det))
            raise ParameterError(
                f"element {bad} has nonpositive Jacobian determinant "
                f"({det[bad]:.3e}); mesh is tangled")
        inv_t = np.empty_like(jac)
        inv_t[:, 0, 0] = jac[:, 1, 1]
        inv_t[:, 0, 1] = -jac[:, 1, 0]
        inv_t[:, 1, 0] = -jac[:, 0, 1]
        inv_t[:, 1, 1] = jac[:, 0, 0]
        inv_t /= det[:, None, None]
        self.jac = jac
        self.det = det
        self.inv_t = inv_t


@dataclass(frozen=True)
class QualityReport:
    """Mesh-quality summary for a displacement of a base mesh.

    ``min_det_ratio`` is the minimum over elements of deformed/original
    area (the determinant of the piecewise-affine transformation
    ``T = I + V``); a nonpositive value flags a tangled configuration.
    ``max_displacement_gradient`` is the largest spectral norm of the
    per-element displacement Jacobian ``DV``.
    """

    min_det_ratio: float
    max_displacement_gradient: float


def _edge_matrices(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    mats = np.empty((len(triangles), 2, 2))
    mats[:, :, 0] = p1 - p0
    mats[:, :, 1] = p2 - p0
    return mats


def _check_displacement(mesh, displacement):
    disp = np.asarray(displacement, dtype=float)
    if disp.shape != (mesh.n_vertices, 2):
        raise InputShapeError(
            f"displacement has shape {disp.shape}, expected "
            f"({mesh.n_vertices}, 2)")
    return disp


def deform(mesh: TriMesh, displacement) -> TriMesh:
    """Move every vertex by its displacement vector, keep connectivity.

    The result may be tangled; no re-orientation or validation happens
    here (use :func:`quality` to detect degenerate elements).
    """
    disp = _check_displacement(mesh, displacement)
    return TriMesh(mesh.vertices + disp, mesh.triangles,
                   mesh.boundary_edges, mesh.edge_markers, _validate=False)


def det_ratios(mesh: TriMesh, displacement):
    """Per-element area ratio det(DT) of the map ``T = I + V``."""
    disp = _check_displacement(mesh, displacement)
    e0 = _edge_matrices(mesh.vertices, mesh.triangles)
    e1 = _edge_matrices(mesh.vertices + disp, mesh.triangles)
    det0 = e0[:, 0, 0] * e0[:, 1, 1] - e0[:, 0, 1] * e0[:, 1, 0]
    det1 = e1[:, 0, 0] * e1[:, 1, 1] - e1[:, 0, 1] * e1[:, 1, 0]
    return det1 / det0


def quality(mesh: TriMesh, displacement) -> QualityReport:
    """Quality metrics of the piecewise-affine map ``T = I + V``.

    Exact per-element formulas (no quadrature): on each triangle, ``DT``
    is the 2x2 matrix mapping original to deformed edge vectors, so the
    area ratio is ``det(E_deformed) / det(E_original)``.
    """
    disp = _check_displacement(mesh, displacement)
    e0 = _edge_matrices(mesh.vertices, mesh.triangles)
    e1 = _edge_matrices(mesh.vertices + disp, mesh.triangles)
    det0 = e0[:, 0, 0] * e0[:, 1, 1] - e0[:, 0, 1] * e0[:, 1, 0]
    det1 = e1[:, 0, 0] * e1[:, 1, 1] - e1[:, 0, 1] * e1[:, 1, 0]
    ratios = det1 / det0
    # DV = E1 E0^{-1} - I, spectral norm via the 2x2 closed form
    inv0 = np.empty_like(e0)
    inv0[:, 0, 0] = e0[:, 1, 1]
    inv0[:, 0, 1] = -e0[:, 0, 1]
    inv0[:, 1, 0] = -e0[:, 1, 0]
    inv0[:, 1, 1] = e0[:, 0, 0]
    inv0 /= det0[:, None, None]
    dv = np.einsum("eij,ejk->eik", e1, inv0)
    dv[:, 0, 0] -= 1.0
    dv[:, 1, 1] -= 1.0
    m = np.einsum("eki,ekj->eij", dv, dv)  # DV^T DV
    half_tr = 0.5 * (m[:, 0, 0] + m[:, 1, 1])
    detm = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    disc = np.maximum(half_tr ** 2 - detm, 0.0)
    lam_max = half_tr + np.sqrt(disc)
    max_grad = float(np.sqrt(lam_max.max())) if len(lam_max) else 0.0
    min_ratio = float(ratios.min()) if len(ratios) else 1.0
    return QualityReport(min_det_ratio=min_ratio,
                         max_displacement_gradient=max_grad)


def _structured_rectangle(length, height, nx, ny, y_offset):
    if length <= 0 or height <= 0:
        raise ParameterError("length and height must be positive")
    if nx < 2 or ny < 2:
        raise ParameterError("nx and ny must be at least 2")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(y_offset, y_offset + height, ny + 1)
    xx, yy = np.meshgrid(xs, ys)  # row j = constant y
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    triangles = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                triangles.append((a, b, c))
                triangles.append((a, c, d))
            else:
                triangles.append((a, b, d))
                triangles.append((b, c, d))

    edges = []
    markers = []

    def add(a, b, m):
        edges.append((a, b))
        markers.append(m)

    return vertices, np.array(triangles), edges, markers, add, vid


def gen_channel(length, height, nx, ny, bend=0.0) -> TriMesh:
    """Structured channel mesh on ``[0, length] x [-height/2, height/2]``.

    Boundary markers: inlet ``10`` (x = 0), outlet ``11`` (x = length),
    bottom wall ``12``, top wall ``13``. Each grid cell is split into two
    triangles with alternating diagonals, so the mesh has
    ``(nx+1)(ny+1)`` vertices, ``2*nx*ny`` triangles and ``2*(nx+ny)``
    boundary edges.

    With ``bend > 0`` the centerline is shifted vertically by the bump
    ``bend * (1 - cos(2 pi x / length)) / 2``; the shift is a pure
    vertical shear, so element areas, counts and markers are exactly
    those of the straight channel. This mimics the curved initial pipe
    designs used as dissipation-minimization starting points.
    """
    vertices, triangles, edges, markers, add, vid = _structured_rectangle(
        length, height, nx, ny, -0.5 * height)
    for i in range(nx):
        add(vid(i, 0), vid(i + 1, 0), 12)
        add(vid(i, ny), vid(i + 1, ny), 13)
    for j in range(ny):
        add(vid(0, j), vid(0, j + 1), 10)
        add(vid(nx, j), vid(nx, j + 1), 11)
    if bend != 0.0:
        shift = 0.5 * bend * (1.0 - np.cos(2.0 * np.pi * vertices[:, 0] / length))
        vertices = vertices.copy()
        vertices[:, 1] += shift
    return TriMesh(vertices, triangles, np.array(edges), np.array(markers))


def gen_cantilever(length, height, nx, ny) -> TriMesh:
    """Structured cantilever mesh on ``[0, length] x [-height/2, height/2]``.

    Boundary markers: clamped wall ``1`` (x = 0), loaded edge ``2``
    (x = length), free boundary ``3`` (top and bottom). Same structured
    pattern and counts as :func:`gen_channel`.
    """
    vertices, triangles, edges, markers, add, vid = _structured_rectangle(
        length, height, nx, ny, -0.5 * height)
    for i in range(nx):
        add(vid(i, 0), vid(i + 1, 0), 3)
        add(vid(i, ny), vid(i + 1, ny), 3)
    for j in range(ny):
        add(vid(0, j), vid(0, j + 1), 1)
        add(vid(nx, j), vid(nx, j + 1), 2)
    return TriMesh(vertices, triangles, np.array(edges), np.array(markers))
