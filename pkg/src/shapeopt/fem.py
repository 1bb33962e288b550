"""Lagrangian P1/P2 finite element spaces on triangles, plus linear algebra.

Scalar and 2-vector spaces of degree 1 and 2 share one implementation;
vector dofs are interleaved (``2*scalar_dof + component``). The mixed
Taylor-Hood pair stacks a P2 vector space on top of a P1 scalar space.
Assembly kernels live in :mod:`shapeopt.forms`; this module provides the
dof maps, quadrature rules, Dirichlet handling and the direct solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConfigurationError, InputShapeError, ParameterError,
                     SolverError)
from .mesh import ElementGeometry, TriMesh

# --------------------------------------------------------------------------
# quadrature on the reference triangle (0,0)-(1,0)-(0,1) and unit interval

_D4_A1 = 0.445948490915965
_D4_A2 = 0.091576213509771
_D4_W1 = 0.111690794839005  # = 0.223381589678011 * area(ref)
_D4_W2 = 0.054975871827661  # = 0.109951743655322 * area(ref)

_TRI_RULES = {
    2: (np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
        np.full(3, 1.0 / 6.0)),
    4: (np.array([
            [_D4_A1, _D4_A1], [1.0 - 2.0 * _D4_A1, _D4_A1],
            [_D4_A1, 1.0 - 2.0 * _D4_A1],
            [_D4_A2, _D4_A2], [1.0 - 2.0 * _D4_A2, _D4_A2],
            [_D4_A2, 1.0 - 2.0 * _D4_A2]]),
        np.array([_D4_W1, _D4_W1, _D4_W1, _D4_W2, _D4_W2, _D4_W2])),
}


def quadrature(degree):
    """Points/weights on the reference triangle, exact to ``degree``.

    Only degrees 2 (edge midpoints) and 4 (six-point rule) are provided;
    weights are positive and sum to the reference area 1/2.
    """
    if degree not in _TRI_RULES:
        raise ParameterError(f"unsupported quadrature degree {degree}; "
                             f"available: {sorted(_TRI_RULES)}")
    pts, w = _TRI_RULES[degree]
    return pts.copy(), w.copy()


# 3-point Gauss-Legendre on [0, 1]: exact for polynomials up to degree 5
_EDGE_T = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_EDGE_W = np.array([5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])


def edge_quadrature():
    """Points/weights on the unit interval for boundary integrals."""
    return _EDGE_T.copy(), _EDGE_W.copy()


# --------------------------------------------------------------------------
# reference bases

def p1_basis(points):
    """P1 values and gradients at reference points: (nq, 3), (nq, 3, 2)."""
    x, y = points[:, 0], points[:, 1]
    vals = np.stack([1.0 - x - y, x, y], axis=1)
    grads = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
        (len(points), 3, 2)).copy()
    return vals, grads


def p2_basis(points):
    """P2 values and gradients at reference points: (nq, 6), (nq, 6, 2).

    Local order: three vertices, then midpoints of the edges opposite
    each vertex, i.e. edges (1,2), (0,2), (0,1).
    """
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)  # (nq, 3)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(points)
    vals = np.empty((nq, 6))
    grads = np.empty((nq, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    pairs = [(1, 2), (0, 2), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k, :] = 4.0 * (lam[:, j, None] * dlam[i]
                                    + lam[:, i, None] * dlam[j])
    return vals, grads


def reference_basis(degree, points):
    return p1_basis(points) if degree == 1 else p2_basis(points)


# 1D traces on an edge, matching [endpoint0, endpoint1(, midpoint)]
def edge_trace_basis(degree, t):
    if degree == 1:
        return np.stack([1.0 - t, t], axis=1)
    return np.stack([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0),
                     4.0 * t * (1.0 - t)], axis=1)


# --------------------------------------------------------------------------
# function spaces

_FAMILIES = {
    "P1-scalar": (1, 1), "P2-scalar": (2, 1),
    "P1-vector2": (1, 2), "P2-vector2": (2, 2),
    "P1": (1, 1), "P2": (2, 1), "P1v": (1, 2), "P2v": (2, 2),
}


class FunctionSpace:
    """Lagrange space of given degree (1, 2) and component count (1, 2).

    Dof numbering is deterministic: vertex dofs first (mesh order), then
    one dof per edge with edges sorted lexicographically by vertex pair.
    Vector dofs interleave components: global dof = 2*scalar_dof + comp.
    """

    def __init__(self, mesh: TriMesh, degree: int, n_components: int = 1):
        if degree not in (1, 2):
            raise ParameterError("degree must be 1 or 2")
        if n_components not in (1, 2):
            raise ParameterError("n_components must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.n_components = n_components
        nv = mesh.n_vertices
        tri = mesh.triangles

        pairs = np.concatenate([tri[:, [1, 2]], tri[:, [0, 2]], tri[:, [0, 1]]])
        pairs = np.sort(pairs, axis=1)
        self.edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        nt = mesh.n_triangles
        edge_of_cell = inverse.reshape(3, nt).T  # local edges (1,2),(0,2),(0,1)

        if degree == 1:
            self.cell_dofs_scalar = tri.copy()
            self.ndof_scalar = nv
            self.dof_coords = mesh.vertices.copy()
        else:
            self.cell_dofs_scalar = np.concatenate(
                [tri, nv + edge_of_cell], axis=1)
            self.ndof_scalar = nv + len(self.edges)
            mids = 0.5 * (mesh.vertices[self.edges[:, 0]]
                          + mesh.vertices[self.edges[:, 1]])
            self.dof_coords = np.concatenate([mesh.vertices, mids], axis=0)
        self.dim = self.ndof_scalar * n_components

        if n_components == 1:
            self.cell_dofs = self.cell_dofs_scalar
        else:
            s = self.cell_dofs_scalar
            inter = np.empty((nt, 2 * s.shape[1]), dtype=np.int64)
            inter[:, 0::2] = 2 * s
            inter[:, 1::2] = 2 * s + 1
            self.cell_dofs = inter

        # edge pair -> edge index, for boundary dof lookup
        self._edge_keys = self.edges[:, 0] * np.int64(nv) + self.edges[:, 1]

        self._boundary_cache = {}

    @property
    def n_local_scalar(self):
        return self.cell_dofs_scalar.shape[1]

    def _edge_index(self, a, b):
        lo, hi = (a, b) if a < b else (b, a)
        key = lo * np.int64(self.mesh.n_vertices) + hi
        idx = np.searchsorted(self._edge_keys, key)
        if idx >= len(self._edge_keys) or self._edge_keys[idx] != key:
            raise ConfigurationError(f"edge ({a}, {b}) not found in mesh")
        return int(idx)

    def boundary_scalar_dofs(self, marker):
        """Sorted scalar dofs on boundary edges carrying ``marker``."""
        marker = int(marker)
        if marker not in self._boundary_cache:
            if marker not in self.mesh.marker_set():
                raise ConfigurationError(
                    f"marker {marker} not present on mesh (has "
                    f"{sorted(self.mesh.marker_set())})")
            sel = self.mesh.edge_markers == marker
            dofs = set()
            for a, b in self.mesh.boundary_edges[sel]:
                dofs.add(int(a))
                dofs.add(int(b))
                if self.degree == 2:
                    dofs.add(self.mesh.n_vertices + self._edge_index(a, b))
            self._boundary_cache[marker] = np.array(sorted(dofs),
                                                    dtype=np.int64)
        return self._boundary_cache[marker]

    def boundary_dofs(self, marker):
        """Global dofs (all components) on edges carrying ``marker``."""
        scal = self.boundary_scalar_dofs(marker)
        if self.n_components == 1:
            return scal
        return np.sort(np.concatenate([2 * scal, 2 * scal + 1]))

    def interpolate(self, fn):
        """Nodal interpolation; ``fn`` may be a constant or ``fn(x, y)``."""
        coords = self.dof_coords
        if callable(fn):
            vals = np.asarray(fn(coords[:, 0], coords[:, 1]), dtype=float)
        else:
            vals = np.broadcast_to(
                np.asarray(fn, dtype=float),
                (self.ndof_scalar,) if self.n_components == 1
                else (self.ndof_scalar, 2)).copy()
        if self.n_components == 1:
            if vals.shape != (self.ndof_scalar,):
                raise InputShapeError("scalar interpolant has wrong shape")
            return Field(self, vals.astype(float))
        vals = np.asarray(vals, dtype=float)
        if vals.shape == (2, self.ndof_scalar):
            vals = vals.T
        if vals.shape != (self.ndof_scalar, 2):
            raise InputShapeError("vector interpolant has wrong shape")
        return Field(self, vals.reshape(-1))


class TaylorHoodSpace:
    """P2 vector velocity x P1 scalar pressure on one mesh.

    Mixed dofs stack the velocity block first, then pressure.
    """

    family = "TaylorHood"

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.velocity = FunctionSpace(mesh, 2, 2)
        self.pressure = FunctionSpace(mesh, 1, 1)
        self.dim = self.velocity.dim + self.pressure.dim

    def split(self, mixed):
        """Split a mixed coefficient vector into (velocity, pressure) fields."""
        nv = self.velocity.dim
        return (Field(self.velocity, np.array(mixed[:nv])),
                Field(self.pressure, np.array(mixed[nv:])))


def build_space(mesh: TriMesh, family: str):
    """Create a function space from a family name.

    Families: ``P1-scalar``, ``P2-scalar``, ``P1-vector2``,
    ``P2-vector2``, ``TaylorHood`` (aliases ``P1``, ``P2``, ``P1v``,
    ``P2v``, ``TH``).
    """
    if family in ("TaylorHood", "TH"):
        return TaylorHoodSpace(mesh)
    if family not in _FAMILIES:
        raise ParameterError(f"unknown space family {family!r}")
    degree, ncomp = _FAMILIES[family]
    return FunctionSpace(mesh, degree, ncomp)


@dataclass
class Field:
    """Coefficient vector attached to its function space."""

    space: FunctionSpace
    coefs: np.ndarray

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=float)
        if self.coefs.shape != (self.space.dim,):
            raise InputShapeError(
                f"coefficient vector has length {self.coefs.shape}, space "
                f"dimension is {self.space.dim}")

    @classmethod
    def zero(cls, space):
        return cls(space, np.zeros(space.dim))

    def vertex_values(self):
        """Per-vertex values (components for vector spaces)."""
        nv = self.space.mesh.n_vertices
        if self.space.n_components == 1:
            return self.coefs[:nv].copy()
        return self.coefs[:2 * nv].reshape(nv, 2).copy()


# --------------------------------------------------------------------------
# assembly scatter helpers

def scatter_vector(n, idx, local):
    """Accumulate (nt, k) local vectors into a length-n global vector."""
    out = np.zeros(n)
    np.add.at(out, idx.ravel(), local.ravel())
    return out


def scatter_matrix(nrow, ncol, ridx, cidx, local):
    """Accumulate (nt, a, b) local matrices into a CSR matrix."""
    nt, a, b = local.shape
    rows = np.repeat(ridx, b, axis=1).ravel()
    cols = np.tile(cidx, (1, a)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(nrow, ncol))
    return mat.tocsr()


# --------------------------------------------------------------------------
# Dirichlet conditions

def _bc_values(space: FunctionSpace, marker, value):
    """Interpolated boundary values on a marker: (global_dofs, values)."""
    scal = space.boundary_scalar_dofs(marker)
    coords = space.dof_coords[scal]
    if callable(value):
        vals = np.asarray(value(coords[:, 0], coords[:, 1]), dtype=float)
    else:
        vals = np.asarray(value, dtype=float)
    if space.n_components == 1:
        vals = np.broadcast_to(vals, (len(scal),))
        return scal, vals.astype(float)
    if vals.ndim <= 1:
        vals = np.broadcast_to(vals.reshape(-1), (len(scal), 2))
    elif vals.shape == (2, len(scal)):
        vals = vals.T
    if vals.shape != (len(scal), 2):
        raise InputShapeError(f"boundary values for marker {marker} have "
                              f"shape {vals.shape}")
    dofs = np.empty(2 * len(scal), dtype=np.int64)
    dofs[0::2] = 2 * scal
    dofs[1::2] = 2 * scal + 1
    return dofs, np.asarray(vals, dtype=float).reshape(-1)


def dirichlet_data(space, bcs, offset=0):
    """Collect (dofs, values) for a {marker: value} dict.

    Later markers overwrite earlier ones on shared dofs (corner
    vertices); markers are processed in sorted order.
    """
    dof_list, val_list = [], []
    for marker in sorted(bcs):
        dofs, vals = _bc_values(space, marker, bcs[marker])
        dof_list.append(dofs + offset)
        val_list.append(vals)
    if not dof_list:
        return np.empty(0, dtype=np.int64), np.empty(0)
    dofs = np.concatenate(dof_list)
    vals = np.concatenate(val_list)
    # keep the last occurrence of duplicated dofs
    _, last = np.unique(dofs[::-1], return_index=True)
    keep = len(dofs) - 1 - last
    keep.sort()
    return dofs[keep], vals[keep]


def row_replace(matrix, rhs, dofs, values):
    """Replace rows by identity rows and set rhs entries (new objects)."""
    A = matrix.tocsr(copy=True)
    if len(dofs):
        row_ids = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
        A.data[np.isin(row_ids, dofs)] = 0.0
        A = (A + sp.coo_matrix(
            (np.ones(len(dofs)), (dofs, dofs)), shape=A.shape)).tocsr()
    b = np.array(rhs, dtype=float)
    b[dofs] = values
    return A, b


def apply_dirichlet(matrix, rhs, bcs, space):
    """Row-replacement Dirichlet conditions.

    ``bcs`` maps boundary markers to constants or callables ``f(x, y)``.
    Rows of constrained dofs become unit rows and the rhs receives the
    interpolated boundary values.
    """
    dofs, vals = dirichlet_data(space, bcs)
    return row_replace(matrix, rhs, dofs, vals)


# --------------------------------------------------------------------------
# linear solve

def solve_linear(matrix, rhs, opts=None):
    """Sparse direct solve with a hard residual contract.

    Raises :class:`SolverError` on breakdown or when the relative
    residual exceeds 1e-10 (for nonzero rhs), reporting the achieved
    residual.
    """
    del opts  # reserved; the direct factorization needs no options
    b = np.asarray(rhs, dtype=float)
    A = sp.csr_matrix(matrix)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise InputShapeError("matrix/rhs dimensions are inconsistent")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            x = spla.spsolve(A.tocsc(), b)
    except (spla.MatrixRankWarning, RuntimeError, ValueError) as exc:
        raise SolverError(f"direct solve failed: {exc}") from exc
    if not np.isfinite(x).all():
        raise SolverError("direct solve produced non-finite entries")
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if bnorm > 0.0 and res > 1e-10 * bnorm:
        raise SolverError(
            f"linear solve residual {res / bnorm:.3e} exceeds 1e-10",
            residual=res / bnorm)
    return x


def geometry(mesh: TriMesh) -> ElementGeometry:
    """Element geometry tables (affine Jacobians) for assembly."""
    return ElementGeometry(mesh)
