"""Control spaces: parametrizations of the total mesh displacement.

The optimizer works on a flat coefficient vector ``c``; a linear
:class:`ControlMap` turns it into one displacement vector per base-mesh
vertex (the total displacement, so the current design is always
``base + apply(c)``). Two parametrizations are provided:

* :class:`NodalControl` - the mesh's own P1 vector field, with rows
  clamped on selected boundary markers and/or coordinate directions;
* :class:`BSplineControl` - tensorized B-splines on a Cartesian box,
  evaluated at the base vertices. Vertices outside the box never move,
  which is how inlet/outlet or clamped regions are kept fixed.

The map is built once from the base mesh and never rebuilt from
deformed meshes, keeping the optimization variable space constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InputShapeError, ParameterError
from .mesh import TriMesh

_DIM_NAMES = {"x": 0, "y": 1, 0: 0, 1: 1}


def _dims(fixed_dims):
    out = set()
    for d in fixed_dims:
        if d not in _DIM_NAMES:
            raise ParameterError(f"unknown dimension {d!r}; use 'x' or 'y'")
        out.add(_DIM_NAMES[d])
    return frozenset(out)


@dataclass(frozen=True)
class NodalControl:
    """P1 nodal displacement control.

    ``fixed_markers`` clamps both displacement components of every
    vertex on those boundary markers; ``fixed_dims`` zeroes a coordinate
    direction globally. The control vector has one entry per mesh
    displacement dof (2 per vertex, interleaved); clamped entries simply
    have zero rows in the map.
    """

    fixed_markers: tuple = ()
    fixed_dims: tuple = ()


@dataclass(frozen=True)
class BSplineControl:
    """Tensor-product B-spline control on an axis-aligned box.

    ``order`` is the polynomial degree per axis (``order=2`` means
    quadratic, avoiding the knot-multiplicity "order" convention),
    ``level`` the dyadic refinement (``2**level`` knot spans per axis)
    and ``boundary_regularity`` the number of basis functions dropped at
    each end, which forces the value and the first ``r - 1`` derivatives
    to vanish on the box boundary. Coefficients are laid out dim-major,
    then row-major over the active tensor basis ``(ix, iy)``.
    """

    bbox: tuple  # ((x0, x1), (y0, y1))
    level: tuple = (2, 2)
    order: tuple = (2, 2)
    boundary_regularity: tuple = (1, 1)
    fixed_dims: tuple = ()

    def axes(self):
        """Per-axis (interval, level, order, regularity) after validation."""
        bbox = tuple((float(lo), float(hi)) for lo, hi in self.bbox)
        level = tuple(int(v) for v in np.broadcast_to(self.level, (2,)))
        order = tuple(int(v) for v in np.broadcast_to(self.order, (2,)))
        reg = tuple(int(v) for v in
                    np.broadcast_to(self.boundary_regularity, (2,)))
        for (lo, hi) in bbox:
            if not hi > lo:
                raise ParameterError("bbox must be nondegenerate")
        for p, r, lv in zip(order, reg, level):
            if p < 2:
                raise ParameterError("B-spline order (degree) must be >= 2")
            if not 0 <= r <= p - 1:
                raise ParameterError(
                    "boundary regularity must satisfy 0 <= r <= order-1")
            if lv < 0:
                raise ParameterError("level must be nonnegative")
        return bbox, level, order, reg


def _clamped_knots(interval, order, level):
    a, b = interval
    inner = np.linspace(a, b, 2 ** level + 1)
    return np.concatenate([np.full(order, a), inner, np.full(order, b)])


def _basis_matrix(knots, degree, x):
    """All B-spline basis values at points x via Cox-de Boor: (npts, nb)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    t = knots
    nb = len(t) - degree - 1
    vals = ((t[None, :-1] <= x[:, None]) & (x[:, None] < t[None, 1:]))
    vals = vals.astype(float)
    # the right endpoint belongs to the last nonempty span
    at_end = x == t[-1]
    if at_end.any():
        last = np.flatnonzero(t[:-1] < t[1:])[-1]
        vals[at_end] = 0.0
        vals[at_end, last] = 1.0
    for d in range(1, degree + 1):
        new = np.zeros((len(x), len(t) - 1 - d))
        for j in range(len(t) - 1 - d):
            den_l = t[j + d] - t[j]
            if den_l > 0.0:
                new[:, j] += (x - t[j]) / den_l * vals[:, j]
            den_r = t[j + d + 1] - t[j + 1]
            if den_r > 0.0:
                new[:, j] += (t[j + d + 1] - x) / den_r * vals[:, j + 1]
        vals = new
    return vals[:, :nb]


def bspline_eval_1d(order, level, boundary_regularity, interval, x):
    """Active univariate B-spline basis values at ``x``.

    Clamped uniform knot vector with ``2**level`` spans on ``interval``
    and polynomial degree ``order``; the first/last
    ``boundary_regularity`` basis functions are dropped, leaving
    ``2**level + order - 2*boundary_regularity`` active ones. Points
    outside the interval yield a zero row rather than an error (the
    deformation field simply vanishes there).
    """
    p, r = int(order), int(boundary_regularity)
    if p < 1:
        raise ParameterError("order must be at least 1")
    if not 0 <= r <= p - 1:
        raise ParameterError("need 0 <= boundary_regularity <= order-1")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ParameterError("interval must be nondegenerate")
    knots = _clamped_knots((a, b), p, int(level))
    xs = np.asarray(x, dtype=float)
    scalar = xs.ndim == 0
    xs = xs.reshape(-1)
    out = np.zeros((len(xs), len(knots) - p - 1))
    inside = (xs >= a) & (xs <= b)
    if inside.any():
        out[inside] = _basis_matrix(knots, p, xs[inside])
    nb = out.shape[1]
    out = out[:, r:nb - r] if r else out
    return out[0] if scalar else out


class ControlMap:
    """Sparse linear map from control coefficients to vertex displacements."""

    def __init__(self, matrix, spec, mesh: TriMesh):
        self.matrix = sp.csr_matrix(matrix)
        self.spec = spec
        self.n_vertices = mesh.n_vertices
        if self.matrix.shape[0] != 2 * mesh.n_vertices:
            raise InputShapeError("control map rows must be 2 * n_vertices")
        self.dim = self.matrix.shape[1]
        moving = np.zeros(2 * mesh.n_vertices, dtype=bool)
        moving[np.unique(self.matrix.nonzero()[0])] = True
        self._moving_vertex = moving[0::2] | moving[1::2]
        self._fixed_markers = None
        self._mesh = mesh

    def apply(self, c):
        """Displacement at the base vertices: (n_vertices, 2)."""
        c = np.asarray(c, dtype=float)
        if c.shape != (self.dim,):
            raise InputShapeError(
                f"control vector has shape {c.shape}, expected ({self.dim},)")
        return (self.matrix @ c).reshape(self.n_vertices, 2)

    def apply_transpose(self, g):
        """Pull a mesh-displacement dual vector back to control duals."""
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.shape != (2 * self.n_vertices,):
            raise InputShapeError(
                f"gradient vector has length {g.shape}, expected "
                f"({2 * self.n_vertices},)")
        return self.matrix.T @ g

    def zero_control(self):
        return np.zeros(self.dim)

    def fixed_markers(self):
        """Markers all of whose edge vertices have zero map rows."""
        if self._fixed_markers is None:
            fixed = set()
            mesh = self._mesh
            for m in mesh.marker_set():
                sel = mesh.edge_markers == m
                verts = np.unique(mesh.boundary_edges[sel].reshape(-1))
                if not self._moving_vertex[verts].any():
                    fixed.add(int(m))
            self._fixed_markers = frozenset(fixed)
        return self._fixed_markers


def build_control_map(spec, base_mesh: TriMesh) -> ControlMap:
    """Evaluate the control parametrization at the base-mesh vertices."""
    nv = base_mesh.n_vertices
    if isinstance(spec, NodalControl):
        fixed_dims = _dims(spec.fixed_dims)
        keep = np.ones(2 * nv)
        for m in spec.fixed_markers:
            if int(m) not in base_mesh.marker_set():
                raise ConfigurationError(
                    f"fixed marker {m} not present on the mesh")
            sel = base_mesh.edge_markers == int(m)
            verts = np.unique(base_mesh.boundary_edges[sel].reshape(-1))
            keep[2 * verts] = 0.0
            keep[2 * verts + 1] = 0.0
        for d in fixed_dims:
            keep[d::2] = 0.0
        return ControlMap(sp.diags(keep).tocsr(), spec, base_mesh)

    if isinstance(spec, BSplineControl):
        bbox, level, order, reg = spec.axes()
        fixed_dims = _dims(spec.fixed_dims)
        free_dims = [d for d in (0, 1) if d not in fixed_dims]
        if not free_dims:
            raise ConfigurationError("all displacement directions are fixed")
        basis = []
        for axis in (0, 1):
            vals = bspline_eval_1d(order[axis], level[axis], reg[axis],
                                   bbox[axis], base_mesh.vertices[:, axis])
            if vals.shape[1] < 1:
                raise ConfigurationError(
                    "boundary regularity removes every B-spline basis "
                    f"function on axis {axis}")
            basis.append(vals)
        bx, by = basis
        nxa, nya = bx.shape[1], by.shape[1]
        tensor = np.einsum("vi,vj->vij", bx, by).reshape(nv, nxa * nya)
        rows, cols, data = [], [], []
        nz_v, nz_k = np.nonzero(tensor)
        for di, d in enumerate(free_dims):
            rows.append(2 * nz_v + d)
            cols.append(di * (nxa * nya) + nz_k)
            data.append(tensor[nz_v, nz_k])
        mat = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * nv, len(free_dims) * nxa * nya))
        return ControlMap(mat.tocsr(), spec, base_mesh)

    raise ConfigurationError(f"unknown control spec {type(spec).__name__}")
