"""A small integrand language with exact discrete shape derivatives.

A :class:`FormExpr` is a weighted sum of atoms; each atom binds named
field slots and knows how to assemble

* its value (``assemble_value``),
* its exact linearization with respect to a bound field
  (``assemble_partial``, used both for residual vectors and for state
  partials of objectives),
* second partials between a test and a trial slot
  (``assemble_jacobian``),
* its discrete shape derivative along piecewise-affine mesh motions
  (``shape_derivative``).

The shape derivative uses the moving-mesh convention: dof values ride
the mesh, and for a vertex velocity field ``W`` the pullback rules are
``d(dx) = div(W) dx`` and ``d(Du) = -(Du)(DW)``. Concretely every volume
atom reduces to its integrand value ``f`` and the matrix
``G = sum over fields of Du^T (df/dDu)``, after which the gradient entry
for the P1 basis field with component ``c`` at vertex ``j`` is the
integral of ``(f I - G) grad(b_j)`` row ``c``. Boundary-traction atoms
must live on geometrically fixed markers and contribute zero.

All modes of one atom share one quadrature rule, so linearity and
finite-difference consistency hold at floating point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .fem import (FunctionSpace, edge_quadrature, edge_trace_basis,
                  quadrature, reference_basis, scatter_matrix, scatter_vector)
from .mesh import ElementGeometry, TriMesh

_EYE2 = np.eye(2)


class FormExpr:
    """Weighted sum of integrand atoms: ``sum_i coef_i * atom_i``."""

    def __init__(self, terms):
        self.terms = []
        for coef, atom in terms:
            coef = float(coef)
            if not np.isfinite(coef):
                raise ConfigurationError("form coefficients must be finite")
            self.terms.append((coef, atom))

    def __add__(self, other):
        return FormExpr(self.terms + other.terms)

    def scaled(self, s):
        return FormExpr([(s * c, a) for c, a in self.terms])

    def field_names(self):
        names = set()
        for _, atom in self.terms:
            names.update(atom.slots)
        return names


# --------------------------------------------------------------------------
# evaluation context shared by every term of one assembly call

class _Ctx:
    def __init__(self, mesh: TriMesh, fields):
        self.mesh = mesh
        self.fields = dict(fields or {})
        self.geo = ElementGeometry(mesh)
        self._rules = {}
        self._tables = {}
        self._vals = {}
        self._grads = {}

    def rule(self, qd):
        if qd not in self._rules:
            pts, w = quadrature(qd)
            wdet = w[None, :] * self.geo.det[:, None]
            self._rules[qd] = (pts, w, wdet)
        return self._rules[qd]

    def tables(self, degree, qd):
        """Reference values and physical gradients: (nq, nl), (nt, nq, nl, 2)."""
        key = (degree, qd)
        if key not in self._tables:
            pts, _, _ = self.rule(qd)
            vals, ref_grads = reference_basis(degree, pts)
            phys = np.einsum("ekm,qim->eqik", self.geo.inv_t, ref_grads)
            self._tables[key] = (vals, phys)
        return self._tables[key]

    def _field(self, name):
        try:
            return self.fields[name]
        except KeyError:
            raise ConfigurationError(
                f"form references field {name!r} which was not supplied"
            ) from None

    def value(self, name, qd):
        """Field values at quadrature points: (nt, nq) or (nt, nq, 2)."""
        key = (name, qd)
        if key not in self._vals:
            f = self._field(name)
            vals, _ = self.tables(f.space.degree, qd)
            if f.space.n_components == 1:
                ce = f.coefs[f.space.cell_dofs_scalar]
                self._vals[key] = np.einsum("qi,ei->eq", vals, ce)
            else:
                nt = self.mesh.n_triangles
                nl = f.space.n_local_scalar
                ce = f.coefs[f.space.cell_dofs].reshape(nt, nl, 2)
                self._vals[key] = np.einsum("qi,eic->eqc", vals, ce)
        return self._vals[key]

    def grad(self, name, qd):
        """Gradients at quadrature points: (nt, nq, 2) or (nt, nq, 2, 2).

        For vector fields element ``[c, k]`` is the derivative of
        component ``c`` along direction ``k``.
        """
        key = (name, qd)
        if key not in self._grads:
            f = self._field(name)
            _, phys = self.tables(f.space.degree, qd)
            if f.space.n_components == 1:
                ce = f.coefs[f.space.cell_dofs_scalar]
                self._grads[key] = np.einsum("eqik,ei->eqk", phys, ce)
            else:
                nt = self.mesh.n_triangles
                nl = f.space.n_local_scalar
                ce = f.coefs[f.space.cell_dofs].reshape(nt, nl, 2)
                self._grads[key] = np.einsum("eqik,eic->eqck", phys, ce)
        return self._grads[key]

    def space(self, name):
        return self._field(name).space

    def edge_data(self, marker, degree):
        """Boundary-edge tables for a marker: dofs, weights, points, traces."""
        sel = self.mesh.edge_markers == int(marker)
        if not sel.any():
            raise ConfigurationError(
                f"no boundary edges carry marker {marker}")
        edges = self.mesh.boundary_edges[sel]
        a = self.mesh.vertices[edges[:, 0]]
        b = self.mesh.vertices[edges[:, 1]]
        length = np.linalg.norm(b - a, axis=1)
        t, w = edge_quadrature()
        pts = a[:, None, :] * (1.0 - t)[None, :, None] \
            + b[:, None, :] * t[None, :, None]
        trace = edge_trace_basis(degree, t)  # (nq, nloc_edge)
        return edges, length, t, w, pts, trace


def _edge_scalar_dofs(space: FunctionSpace, edges):
    """Scalar dofs along each edge in trace order [end0, end1(, mid)]."""
    cols = [edges[:, 0], edges[:, 1]]
    if space.degree == 2:
        mids = np.array([space.mesh.n_vertices + space._edge_index(a, b)
                         for a, b in edges], dtype=np.int64)
        cols.append(mids)
    return np.stack(cols, axis=1)


def _interleave(scalar_dofs):
    n, k = scalar_dofs.shape
    out = np.empty((n, 2 * k), dtype=np.int64)
    out[:, 0::2] = 2 * scalar_dofs
    out[:, 1::2] = 2 * scalar_dofs + 1
    return out


def _vector_dofmap(ctx, name):
    return ctx.space(name).cell_dofs


def _scalar_dofmap(ctx, name):
    return ctx.space(name).cell_dofs_scalar


def _sym(du):
    return 0.5 * (du + np.swapaxes(du, -1, -2))


def _div(du):
    return du[..., 0, 0] + du[..., 1, 1]


def _stress(du, lam, mu):
    sig = 2.0 * mu * _sym(du)
    tr = lam * _div(du)
    sig = sig.copy()
    sig[..., 0, 0] += tr
    sig[..., 1, 1] += tr
    return sig


def _partial_from_matrix(ctx, name, qd, m):
    """Local vector for d/d(dofs) of integral(M : Du) with M fixed."""
    _, phys = ctx.tables(ctx.space(name).degree, qd)
    _, _, wdet = ctx.rule(qd)
    loc = np.einsum("eq,eqak,eqik->eia", wdet, m, phys)
    return loc.reshape(loc.shape[0], -1)


def _partial_from_value(ctx, name, qd, v):
    """Local vector for d/d(dofs) of integral(V . u) with V fixed."""
    vals, _ = ctx.tables(ctx.space(name).degree, qd)
    _, _, wdet = ctx.rule(qd)
    loc = np.einsum("eq,eqa,qi->eia", wdet, v, vals)
    return loc.reshape(loc.shape[0], -1)


def _partial_scalar(ctx, name, qd, s):
    vals, _ = ctx.tables(ctx.space(name).degree, qd)
    _, _, wdet = ctx.rule(qd)
    return np.einsum("eq,eq,qi->ei", wdet, s, vals)


def _gmat(du, m):
    """G = Du^T M, the shape-derivative stress of one field."""
    return np.einsum("eqck,eqcl->eqkl", du, m)


# --------------------------------------------------------------------------
# atoms

class Atom:
    slots: tuple = ()
    is_boundary = False

    def quad_degree(self, ctx):
        deg = 2
        for s in self.slots:
            if ctx.space(s).degree == 2:
                deg = 4
        return deg

    def density(self, ctx, qd):
        raise NotImplementedError

    def partial_local(self, ctx, qd, wrt):
        """(local, dofmap) for the exact linearization, or None."""
        return None

    def jacobian_local(self, ctx, qd, test, trial):
        """(local, rowmap, colmap) for the second partial, or None."""
        return None

    def eshelby(self, ctx, qd):
        """(f, G) with f the integrand and G = sum Du^T df/dDu."""
        raise NotImplementedError


@dataclass(frozen=True)
class GradGrad(Atom):
    """``viscosity * grad(a) : grad(b)`` (full-gradient viscous pairing)."""

    a: str
    b: str
    viscosity: float = 1.0

    @property
    def slots(self):
        return (self.a, self.b)

    def density(self, ctx, qd):
        da, db = ctx.grad(self.a, qd), ctx.grad(self.b, qd)
        return self.viscosity * np.einsum("eqck,eqck->eq", da, db)

    def partial_local(self, ctx, qd, wrt):
        if wrt == self.a:
            m = self.viscosity * ctx.grad(self.b, qd)
        elif wrt == self.b:
            m = self.viscosity * ctx.grad(self.a, qd)
        else:
            return None
        return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)

    def jacobian_local(self, ctx, qd, test, trial):
        if {test, trial} != {self.a, self.b}:
            return None
        _, bt = ctx.tables(ctx.space(test).degree, qd)
        _, bu = ctx.tables(ctx.space(trial).degree, qd)
        _, _, wdet = ctx.rule(qd)
        k0 = self.viscosity * np.einsum("eq,eqik,eqjk->eij", wdet, bt, bu)
        loc = np.einsum("eij,ab->eiajb", k0, _EYE2)
        nt = loc.shape[0]
        loc = loc.reshape(nt, 2 * bt.shape[2], 2 * bu.shape[2])
        return loc, _vector_dofmap(ctx, test), _vector_dofmap(ctx, trial)

    def eshelby(self, ctx, qd):
        da, db = ctx.grad(self.a, qd), ctx.grad(self.b, qd)
        f = self.viscosity * np.einsum("eqck,eqck->eq", da, db)
        g = _gmat(da, self.viscosity * db) + _gmat(db, self.viscosity * da)
        return f, g


@dataclass(frozen=True)
class SymGradSymGrad(Atom):
    """``2 * viscosity * eps(a) : eps(b)`` with ``eps`` the symmetric gradient."""

    a: str
    b: str
    viscosity: float = 1.0

    @property
    def slots(self):
        return (self.a, self.b)

    def density(self, ctx, qd):
        ea = _sym(ctx.grad(self.a, qd))
        eb = _sym(ctx.grad(self.b, qd))
        return 2.0 * self.viscosity * np.einsum("eqck,eqck->eq", ea, eb)

    def partial_local(self, ctx, qd, wrt):
        if wrt == self.a:
            m = 2.0 * self.viscosity * _sym(ctx.grad(self.b, qd))
        elif wrt == self.b:
            m = 2.0 * self.viscosity * _sym(ctx.grad(self.a, qd))
        else:
            return None
        return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)

    def jacobian_local(self, ctx, qd, test, trial):
        if {test, trial} != {self.a, self.b}:
            return None
        _, bt = ctx.tables(ctx.space(test).degree, qd)
        _, bu = ctx.tables(ctx.space(trial).degree, qd)
        _, _, wdet = ctx.rule(qd)
        nu = self.viscosity
        k0 = nu * np.einsum("eq,eqik,eqjk->eij", wdet, bt, bu)
        loc = np.einsum("eij,ab->eiajb", k0, _EYE2)
        loc = loc + nu * np.einsum("eq,eqib,eqja->eiajb", wdet, bt, bu)
        nt = loc.shape[0]
        loc = loc.reshape(nt, 2 * bt.shape[2], 2 * bu.shape[2])
        return loc, _vector_dofmap(ctx, test), _vector_dofmap(ctx, trial)

    def eshelby(self, ctx, qd):
        da, db = ctx.grad(self.a, qd), ctx.grad(self.b, qd)
        ma = 2.0 * self.viscosity * _sym(db)
        mb = 2.0 * self.viscosity * _sym(da)
        f = np.einsum("eqck,eqck->eq", _sym(da), ma)
        return f, _gmat(da, ma) + _gmat(db, mb)


@dataclass(frozen=True)
class StressStrain(Atom):
    """``sigma(a) : eps(b)`` with Lame parameters (lam, mu)."""

    a: str
    b: str
    lam: float = 1.0
    mu: float = 1.0

    @property
    def slots(self):
        return (self.a, self.b)

    def density(self, ctx, qd):
        sig = _stress(ctx.grad(self.a, qd), self.lam, self.mu)
        eb = _sym(ctx.grad(self.b, qd))
        return np.einsum("eqck,eqck->eq", sig, eb)

    def partial_local(self, ctx, qd, wrt):
        if wrt == self.a:
            m = _stress(ctx.grad(self.b, qd), self.lam, self.mu)
        elif wrt == self.b:
            m = _stress(ctx.grad(self.a, qd), self.lam, self.mu)
        else:
            return None
        return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)

    def jacobian_local(self, ctx, qd, test, trial):
        if {test, trial} != {self.a, self.b}:
            return None
        _, bt = ctx.tables(ctx.space(test).degree, qd)
        _, bu = ctx.tables(ctx.space(trial).degree, qd)
        _, _, wdet = ctx.rule(qd)
        k0 = self.mu * np.einsum("eq,eqik,eqjk->eij", wdet, bt, bu)
        loc = np.einsum("eij,ab->eiajb", k0, _EYE2)
        loc = loc + self.mu * np.einsum("eq,eqib,eqja->eiajb", wdet, bt, bu)
        loc = loc + self.lam * np.einsum("eq,eqia,eqjb->eiajb", wdet, bt, bu)
        nt = loc.shape[0]
        loc = loc.reshape(nt, 2 * bt.shape[2], 2 * bu.shape[2])
        return loc, _vector_dofmap(ctx, test), _vector_dofmap(ctx, trial)

    def eshelby(self, ctx, qd):
        da, db = ctx.grad(self.a, qd), ctx.grad(self.b, qd)
        ma = _stress(db, self.lam, self.mu)
        mb = _stress(da, self.lam, self.mu)
        f = np.einsum("eqck,eqck->eq", mb, _sym(db))
        return f, _gmat(da, ma) + _gmat(db, mb)


@dataclass(frozen=True)
class PressureDiv(Atom):
    """``-p * div(b)`` coupling a scalar pressure and a vector field."""

    p: str
    b: str

    @property
    def slots(self):
        return (self.p, self.b)

    def density(self, ctx, qd):
        return -ctx.value(self.p, qd) * _div(ctx.grad(self.b, qd))

    def partial_local(self, ctx, qd, wrt):
        if wrt == self.p:
            s = -_div(ctx.grad(self.b, qd))
            return _partial_scalar(ctx, wrt, qd, s), _scalar_dofmap(ctx, wrt)
        if wrt == self.b:
            p = ctx.value(self.p, qd)
            m = np.einsum("eq,ab->eqab", -p, _EYE2)
            return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)
        return None

    def jacobian_local(self, ctx, qd, test, trial):
        if {test, trial} != {self.p, self.b}:
            return None
        _, _, wdet = ctx.rule(qd)
        np_vals, _ = ctx.tables(ctx.space(self.p).degree, qd)
        _, bb = ctx.tables(ctx.space(self.b).degree, qd)
        core = -np.einsum("eq,qj,eqia->eiaj", wdet, np_vals, bb)
        nt = core.shape[0]
        if test == self.b:
            loc = core.reshape(nt, -1, np_vals.shape[1])
            return loc, _vector_dofmap(ctx, self.b), _scalar_dofmap(ctx, self.p)
        loc = np.transpose(core, (0, 3, 1, 2)).reshape(nt, np_vals.shape[1], -1)
        return loc, _scalar_dofmap(ctx, self.p), _vector_dofmap(ctx, self.b)

    def eshelby(self, ctx, qd):
        p = ctx.value(self.p, qd)
        db = ctx.grad(self.b, qd)
        f = -p * _div(db)
        m = np.einsum("eq,ab->eqab", -p, _EYE2)
        return f, _gmat(db, m)


@dataclass(frozen=True)
class DivConstraint(Atom):
    """``q * div(a)`` (weak incompressibility pairing)."""

    q: str
    a: str

    @property
    def slots(self):
        return (self.q, self.a)

    def density(self, ctx, qd):
        return ctx.value(self.q, qd) * _div(ctx.grad(self.a, qd))

    def partial_local(self, ctx, qd, wrt):
        if wrt == self.q:
            s = _div(ctx.grad(self.a, qd))
            return _partial_scalar(ctx, wrt, qd, s), _scalar_dofmap(ctx, wrt)
        if wrt == self.a:
            q = ctx.value(self.q, qd)
            m = np.einsum("eq,ab->eqab", q, _EYE2)
            return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)
        return None

    def jacobian_local(self, ctx, qd, test, trial):
        if {test, trial} != {self.q, self.a}:
            return None
        _, _, wdet = ctx.rule(qd)
        nq_vals, _ = ctx.tables(ctx.space(self.q).degree, qd)
        _, ba = ctx.tables(ctx.space(self.a).degree, qd)
        core = np.einsum("eq,qi,eqjb->eijb", wdet, nq_vals, ba)
        nt = core.shape[0]
        if test == self.q:
            loc = core.reshape(nt, nq_vals.shape[1], -1)
            return loc, _scalar_dofmap(ctx, self.q), _vector_dofmap(ctx, self.a)
        loc = np.transpose(core, (0, 2, 3, 1)).reshape(nt, -1, nq_vals.shape[1])
        return loc, _vector_dofmap(ctx, self.a), _scalar_dofmap(ctx, self.q)

    def eshelby(self, ctx, qd):
        q = ctx.value(self.q, qd)
        da = ctx.grad(self.a, qd)
        f = q * _div(da)
        m = np.einsum("eq,ab->eqab", q, _EYE2)
        return f, _gmat(da, m)


@dataclass(frozen=True)
class Convection(Atom):
    """``b . (grad a) a``, the Navier-Stokes transport trilinear form."""

    b: str
    a: str

    @property
    def slots(self):
        return (self.b, self.a)

    def quad_degree(self, ctx):
        return 4

    def density(self, ctx, qd):
        bv = ctx.value(self.b, qd)
        av = ctx.value(self.a, qd)
        da = ctx.grad(self.a, qd)
        return np.einsum("eqc,eqck,eqk->eq", bv, da, av)

    def partial_local(self, ctx, qd, wrt):
        av = ctx.value(self.a, qd)
        da = ctx.grad(self.a, qd)
        if wrt == self.b:
            v = np.einsum("eqck,eqk->eqc", da, av)
            return _partial_from_value(ctx, wrt, qd, v), _vector_dofmap(ctx, wrt)
        if wrt == self.a:
            bv = ctx.value(self.b, qd)
            vals, phys = ctx.tables(ctx.space(self.a).degree, qd)
            _, _, wdet = ctx.rule(qd)
            b_dot_grad = np.einsum("eqjk,eqk->eqj", phys, av)
            t1 = np.einsum("eq,eqb,eqj->ejb", wdet, bv, b_dot_grad)
            bda = np.einsum("eqc,eqcb->eqb", bv, da)
            t2 = np.einsum("eq,qj,eqb->ejb", wdet, vals, bda)
            loc = (t1 + t2).reshape(t1.shape[0], -1)
            return loc, _vector_dofmap(ctx, wrt)
        return None

    def jacobian_local(self, ctx, qd, test, trial):
        if test != self.b or trial != self.a:
            if {test, trial} == {self.a, self.b}:
                raise ConfigurationError(
                    "convection jacobian expects the test function in the "
                    "transport (first) slot")
            return None
        av = ctx.value(self.a, qd)
        da = ctx.grad(self.a, qd)
        nt_vals, _ = ctx.tables(ctx.space(test).degree, qd)
        nu_vals, bu = ctx.tables(ctx.space(trial).degree, qd)
        _, _, wdet = ctx.rule(qd)
        gdot = np.einsum("eqjk,eqk->eqj", bu, av)
        loc = np.einsum("eq,qi,eqj,ab->eiajb", wdet, nt_vals, gdot, _EYE2)
        loc = loc + np.einsum("eq,qi,eqab,qj->eiajb", wdet, nt_vals, da, nu_vals)
        nt = loc.shape[0]
        loc = loc.reshape(nt, 2 * nt_vals.shape[1], 2 * nu_vals.shape[1])
        return loc, _vector_dofmap(ctx, test), _vector_dofmap(ctx, trial)

    def eshelby(self, ctx, qd):
        bv = ctx.value(self.b, qd)
        av = ctx.value(self.a, qd)
        da = ctx.grad(self.a, qd)
        f = np.einsum("eqc,eqck,eqk->eq", bv, da, av)
        m = np.einsum("eqc,eqk->eqck", bv, av)
        return f, _gmat(da, m)


@dataclass(frozen=True)
class DissipationEnergy(Atom):
    """``viscosity * eps(a) : eps(a)``, the kinetic dissipation density."""

    a: str
    viscosity: float = 1.0

    @property
    def slots(self):
        return (self.a,)

    def quad_degree(self, ctx):
        return 4

    def density(self, ctx, qd):
        ea = _sym(ctx.grad(self.a, qd))
        return self.viscosity * np.einsum("eqck,eqck->eq", ea, ea)

    def partial_local(self, ctx, qd, wrt):
        if wrt != self.a:
            return None
        m = 2.0 * self.viscosity * _sym(ctx.grad(self.a, qd))
        return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)

    def eshelby(self, ctx, qd):
        da = ctx.grad(self.a, qd)
        ea = _sym(da)
        f = self.viscosity * np.einsum("eqck,eqck->eq", ea, ea)
        return f, _gmat(da, 2.0 * self.viscosity * ea)


@dataclass(frozen=True)
class ComplianceEnergy(Atom):
    """``sigma(a) : eps(a)``, the elastic strain energy density (doubled)."""

    a: str
    lam: float = 1.0
    mu: float = 1.0

    @property
    def slots(self):
        return (self.a,)

    def quad_degree(self, ctx):
        return 4

    def density(self, ctx, qd):
        da = ctx.grad(self.a, qd)
        sig = _stress(da, self.lam, self.mu)
        return np.einsum("eqck,eqck->eq", sig, _sym(da))

    def partial_local(self, ctx, qd, wrt):
        if wrt != self.a:
            return None
        m = 2.0 * _stress(ctx.grad(self.a, qd), self.lam, self.mu)
        return _partial_from_matrix(ctx, wrt, qd, m), _vector_dofmap(ctx, wrt)

    def eshelby(self, ctx, qd):
        da = ctx.grad(self.a, qd)
        sig = _stress(da, self.lam, self.mu)
        f = np.einsum("eqck,eqck->eq", sig, _sym(da))
        return f, _gmat(da, 2.0 * sig)


@dataclass(frozen=True)
class VolumeOne(Atom):
    """Constant integrand 1 (area functional)."""

    def quad_degree(self, ctx):
        return 2

    def density(self, ctx, qd):
        _, _, wdet = ctx.rule(qd)
        return np.ones_like(wdet)

    def eshelby(self, ctx, qd):
        _, _, wdet = ctx.rule(qd)
        f = np.ones_like(wdet)
        g = np.zeros(wdet.shape + (2, 2))
        return f, g


@dataclass(frozen=True)
class BoundaryTraction(Atom):
    """``g . b`` integrated over boundary edges carrying ``marker``.

    ``g`` is data: a constant 2-vector or a callable ``g(x, y)``
    returning one. The marker must be geometrically fixed under the
    control space, so the atom's shape derivative is identically zero.
    """

    g: object
    b: str
    marker: int
    is_boundary = True

    # dataclass with a callable member: compare by identity
    __hash__ = None

    @property
    def slots(self):
        return (self.b,)

    def _g_at(self, pts):
        if callable(self.g):
            flat = pts.reshape(-1, 2)
            vals = np.asarray(self.g(flat[:, 0], flat[:, 1]), dtype=float)
            if vals.shape == (2, flat.shape[0]):
                vals = vals.T
            vals = np.broadcast_to(vals, (flat.shape[0], 2))
            return vals.reshape(pts.shape)
        return np.broadcast_to(np.asarray(self.g, dtype=float), pts.shape)

    def boundary_value(self, ctx):
        space = ctx.space(self.b)
        edges, length, _, w, pts, trace = ctx.edge_data(self.marker,
                                                        space.degree)
        gvals = self._g_at(pts)
        sdofs = _edge_scalar_dofs(space, edges)
        coefs = ctx._field(self.b).coefs
        ce = coefs[_interleave(sdofs)].reshape(len(edges), -1, 2)
        bvals = np.einsum("qi,eic->eqc", trace, ce)
        return float(np.einsum("e,q,eqc,eqc->", length, w, gvals, bvals))

    def boundary_partial(self, ctx, wrt):
        if wrt != self.b:
            return None
        space = ctx.space(self.b)
        edges, length, _, w, pts, trace = ctx.edge_data(self.marker,
                                                        space.degree)
        gvals = self._g_at(pts)
        loc = np.einsum("e,q,eqa,qi->eia", length, w, gvals, trace)
        sdofs = _edge_scalar_dofs(space, edges)
        return loc.reshape(len(edges), -1), _interleave(sdofs)


# --------------------------------------------------------------------------
# assembly drivers

def assemble_value(form: FormExpr, mesh: TriMesh, fields) -> float:
    """Evaluate a fully bound form to a scalar."""
    ctx = _Ctx(mesh, fields)
    total = 0.0
    for coef, atom in form.terms:
        if atom.is_boundary:
            total += coef * atom.boundary_value(ctx)
        else:
            qd = atom.quad_degree(ctx)
            _, _, wdet = ctx.rule(qd)
            total += coef * float((wdet * atom.density(ctx, qd)).sum())
    return total


def assemble_partial(form: FormExpr, mesh: TriMesh, fields, wrt: str):
    """Exact derivative of the form's value w.r.t. one field's dofs."""
    ctx = _Ctx(mesh, fields)
    space = ctx.space(wrt)
    out = np.zeros(space.dim)
    for coef, atom in form.terms:
        if atom.is_boundary:
            contrib = atom.boundary_partial(ctx, wrt)
        elif wrt in atom.slots:
            contrib = atom.partial_local(ctx, atom.quad_degree(ctx), wrt)
        else:
            contrib = None
        if contrib is not None:
            local, dofmap = contrib
            out += coef * scatter_vector(space.dim, dofmap, local)
    return out


# spec-facing alias: the partial w.r.t. a state slot
state_partial = assemble_partial


def assemble_jacobian(form: FormExpr, mesh: TriMesh, fields, test: str,
                      trial: str):
    """Second partial (test x trial) of the form's value as a CSR matrix."""
    ctx = _Ctx(mesh, fields)
    nrow = ctx.space(test).dim
    ncol = ctx.space(trial).dim
    out = sp.csr_matrix((nrow, ncol))
    for coef, atom in form.terms:
        if atom.is_boundary or not {test, trial} <= set(atom.slots):
            continue
        contrib = atom.jacobian_local(ctx, atom.quad_degree(ctx), test, trial)
        if contrib is not None:
            local, rows, cols = contrib
            out = out + coef * scatter_matrix(nrow, ncol, rows, cols, local)
    return out.tocsr()


def assemble(form, mesh, fields, mode, **kw):
    """Mode dispatcher: value | residual | jacobian | state_partial."""
    if mode == "value":
        return assemble_value(form, mesh, fields)
    if mode in ("residual", "state_partial"):
        return assemble_partial(form, mesh, fields, kw["wrt"])
    if mode == "jacobian":
        return assemble_jacobian(form, mesh, fields, kw["test"], kw["trial"])
    raise ConfigurationError(f"unknown assembly mode {mode!r}")


def shape_derivative(form: FormExpr, mesh: TriMesh, fields,
                     fixed_markers=frozenset()):
    """Gradient of the form's value w.r.t. vertex positions.

    Returns the interleaved P1-vector coefficient vector ``g`` with
    ``g[2*i + c]`` the exact derivative of the assembled value when
    vertex ``i`` moves along component ``c`` and all dof values are held
    fixed. Boundary-traction atoms must sit on ``fixed_markers`` and
    contribute zero.
    """
    ctx = _Ctx(mesh, fields)
    nv = mesh.n_vertices
    out = np.zeros(2 * nv)
    tri = mesh.triangles
    vdofs = np.empty((mesh.n_triangles, 3, 2), dtype=np.int64)
    vdofs[:, :, 0] = 2 * tri
    vdofs[:, :, 1] = 2 * tri + 1
    vdofs = vdofs.reshape(mesh.n_triangles, 6)
    for coef, atom in form.terms:
        if atom.is_boundary:
            if int(atom.marker) not in set(int(m) for m in fixed_markers):
                raise ConfigurationError(
                    f"boundary traction on marker {atom.marker} requires that "
                    f"marker to be geometrically fixed (fixed markers: "
                    f"{sorted(fixed_markers)})")
            continue
        qd = atom.quad_degree(ctx)
        _, _, wdet = ctx.rule(qd)
        _, b1 = ctx.tables(1, qd)  # P1 gradients of the motion field
        f, g = atom.eshelby(ctx, qd)
        loc = np.einsum("eq,eq,eqjc->ejc", wdet, f, b1)
        loc = loc - np.einsum("eq,eqck,eqjk->ejc", wdet, g, b1)
        out += coef * scatter_vector(2 * nv, vdofs, loc.reshape(-1, 6))
    return out
