"""Inner products on the control space and the Riesz descent map.

The Gram operator is the FE inner-product matrix on the base mesh's P1
vector space, projected through the (constant) control map:
``G = I^T A I``. Descent directions solve ``G d = -g``, i.e. they are
Riesz representatives of the negative gradient in the chosen metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MetricError, ParameterError
from .fem import FunctionSpace, quadrature, reference_basis
from .mesh import ElementGeometry, TriMesh

_KINDS = ("H1", "Laplace", "Elasticity")


@dataclass(frozen=True)
class MetricSpec:
    """Choice of inner product on displacement fields.

    ``Laplace`` pairs full gradients, ``H1`` adds the mass term,
    ``Elasticity`` pairs symmetric gradients (linear-elastic energy).
    A Cauchy-Riemann augmentation with weight ``gamma`` penalizes
    deviation from conformality, which tends to preserve element shape.
    """

    kind: str = "Elasticity"
    cauchy_riemann_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"metric kind must be one of {_KINDS}")
        if not np.isfinite(self.cauchy_riemann_weight) \
                or self.cauchy_riemann_weight < 0.0:
            raise ParameterError("cauchy_riemann_weight must be finite and >= 0")


def _p1_vector_operator(mesh: TriMesh, kind: str, gamma: float):
    """Assemble the chosen pairing on the P1 vector space: (2nv, 2nv) CSR."""
    space = FunctionSpace(mesh, 1, 2)
    geo = ElementGeometry(mesh)
    pts, w = quadrature(2)
    vals, ref_grads = reference_basis(1, pts)
    phys = np.einsum("ekm,qim->eqik", geo.inv_t, ref_grads)
    wdet = w[None, :] * geo.det[:, None]
    eye = np.eye(2)

    grad_dot = np.einsum("eq,eqik,eqjk->eij", wdet, phys, phys)
    loc = np.zeros((mesh.n_triangles, 3, 2, 3, 2))
    if kind in ("H1", "Laplace"):
        loc += np.einsum("eij,ab->eiajb", grad_dot, eye)
    if kind == "H1":
        mass = np.einsum("eq,qi,qj->eij", wdet, vals, vals)
        loc += np.einsum("eij,ab->eiajb", mass, eye)
    if kind == "Elasticity":
        # eps(e_a N_i) : eps(e_b N_j) = (d_ab grad_i.grad_j + d_b N_i d_a N_j)/2
        loc += 0.5 * np.einsum("eij,ab->eiajb", grad_dot, eye)
        loc += 0.5 * np.einsum("eq,eqib,eqja->eiajb", wdet, phys, phys)
    if gamma > 0.0:
        # (dx V1 - dy V2)^2 + (dy V1 + dx V2)^2 expanded over basis pairs
        c1 = np.stack([phys[..., 0], -phys[..., 1]], axis=-1)  # [e,q,i,a]
        c2 = np.stack([phys[..., 1], phys[..., 0]], axis=-1)
        loc += gamma * np.einsum("eq,eqia,eqjb->eiajb", wdet, c1, c1)
        loc += gamma * np.einsum("eq,eqia,eqjb->eiajb", wdet, c2, c2)

    nt = mesh.n_triangles
    loc = loc.reshape(nt, 6, 6)
    dofs = space.cell_dofs
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    return sp.coo_matrix((loc.ravel(), (rows, cols)),
                         shape=(space.dim, space.dim)).tocsr()


class GramOperator:
    """SPD matrix on control coordinates with a cached factorization."""

    def __init__(self, matrix):
        g = sp.csr_matrix(matrix)
        g = 0.5 * (g + g.T)
        if not np.isfinite(g.data).all():
            raise MetricError("Gram operator has non-finite entries")
        self.matrix = g.tocsr()
        self.dim = g.shape[0]
        try:
            self._factor = spla.splu(g.tocsc())
        except RuntimeError as exc:
            raise MetricError(f"Gram factorization failed: {exc}") from exc

    @classmethod
    def from_matrix(cls, matrix):
        return cls(sp.csr_matrix(np.asarray(matrix, dtype=float)))

    def matvec(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def solve(self, rhs):
        out = self._factor.solve(np.asarray(rhs, dtype=float))
        if not np.isfinite(out).all():
            raise MetricError("Gram solve produced non-finite entries")
        return out

    def inner(self, u, v):
        return float(np.dot(u, self.matvec(v)))

    def norm(self, v):
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def dual_norm(self, g):
        """Norm of a dual vector: sqrt(g . G^{-1} g)."""
        return float(np.sqrt(max(np.dot(g, self.solve(g)), 0.0)))


def assemble_gram(metric: MetricSpec, control_map, base_mesh: TriMesh,
                  regularization=1e-10) -> GramOperator:
    """Project the FE inner product through the control map.

    Control dofs the map ignores (fixed rows) receive only the trace
    regularization ``delta = regularization * trace(G) / dim``, which
    keeps the operator positive definite without affecting moving dofs.
    """
    a = _p1_vector_operator(base_mesh, metric.kind,
                            metric.cauchy_riemann_weight)
    imap = control_map.matrix
    g = (imap.T @ (a @ imap)).tocsr()
    trace = g.diagonal().sum()
    if not np.isfinite(trace):
        raise MetricError("Gram assembly produced non-finite entries")
    if trace <= 0.0:
        raise MetricError("Gram operator has vanishing trace; the control "
                          "map does not move any vertex")
    delta = regularization * trace / g.shape[0]
    if delta > 0.0:
        g = g + delta * sp.identity(g.shape[0], format="csr")
    return GramOperator(g)


def riesz_descent(gram: GramOperator, g):
    """Riesz representative of the negative gradient: solves G d = -g."""
    g = np.asarray(g, dtype=float)
    if g.shape != (gram.dim,):
        raise MetricError(f"gradient has shape {g.shape}, expected "
                          f"({gram.dim},)")
    return gram.solve(-g)
