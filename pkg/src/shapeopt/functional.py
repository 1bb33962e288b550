"""The reduced shape functional and its adjoint-based gradient.

``value(c)`` runs the pipeline control -> displacement -> quality guard
-> deformed mesh -> state solve -> objective + regularization. Every
failure (tangled or low-quality mesh, solver breakdown) yields NaN, by
design and without raising; the trust-region optimizer interprets NaN
as "shrink the step". ``gradient(c)`` may only be called where the
value is finite; it assembles the shape derivative of the Lagrangian
(objective plus residual tested with the adjoint state) on the deformed
mesh and pulls it back through the control map.
"""

from __future__ import annotations

import numpy as np

from . import forms
from .errors import ContractError, InputShapeError, ParameterError
from .fem import quadrature, reference_basis
from .mesh import ElementGeometry, TriMesh, deform, quality, signed_areas

DISCRIMINANT_FLOOR = 1e-30


def _displacement_gradients(mesh: TriMesh, disp):
    """Per-element jacobians of the P1 displacement field: (nt, 2, 2)."""
    geo = ElementGeometry(mesh)
    pts, _ = quadrature(2)
    _, ref_grads = reference_basis(1, pts)
    b1 = np.einsum("ekm,im->eik", geo.inv_t, ref_grads[0])
    dv = np.einsum("eic,eik->eck", disp[mesh.triangles], b1)
    return dv, b1, 0.5 * geo.det


def _sigma_max_sq(dv):
    """Largest eigenvalue of DV^T DV via the 2x2 closed form."""
    m = np.einsum("eki,ekj->eij", dv, dv)
    half_tr = 0.5 * (m[:, 0, 0] + m[:, 1, 1])
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    disc = half_tr ** 2 - det
    return half_tr + np.sqrt(np.maximum(disc, DISCRIMINANT_FLOOR)), half_tr, disc


class SpectralPenalty:
    """Integral of the squared largest singular value of D(T - I).

    Evaluated on the base mesh: the displacement is the total one, so
    the penalty measures how far the current transformation is from the
    identity. The eigenvalue tie (disc = 0) is smoothed by flooring the
    discriminant at 1e-30; the gradient of the floored square root is
    taken as zero on the floor.
    """

    def __init__(self, base_mesh: TriMesh, control_map):
        self.base_mesh = base_mesh
        self.control_map = control_map

    def value(self, c):
        disp = self.control_map.apply(c)
        dv, _, areas = _displacement_gradients(self.base_mesh, disp)
        lam, _, _ = _sigma_max_sq(dv)
        return float((areas * lam).sum())

    def gradient(self, c):
        disp = self.control_map.apply(c)
        dv, b1, areas = _displacement_gradients(self.base_mesh, disp)
        lam, half_tr, disc = _sigma_max_sq(dv)
        det = dv[:, 0, 0] * dv[:, 1, 1] - dv[:, 0, 1] * dv[:, 1, 0]
        cof = np.empty_like(dv)
        cof[:, 0, 0] = dv[:, 1, 1]
        cof[:, 0, 1] = -dv[:, 1, 0]
        cof[:, 1, 0] = -dv[:, 0, 1]
        cof[:, 1, 1] = dv[:, 0, 0]
        dlam = dv.copy()
        active = disc > DISCRIMINANT_FLOOR
        if active.any():
            scale = 1.0 / np.sqrt(disc[active])
            dlam[active] += scale[:, None, None] * (
                half_tr[active, None, None] * dv[active]
                - det[active, None, None] * cof[active])
        mesh = self.base_mesh
        nodal = np.zeros(2 * mesh.n_vertices)
        loc = np.einsum("e,eck,eik->eic", areas, dlam, b1)
        vdofs = np.empty((mesh.n_triangles, 3, 2), dtype=np.int64)
        vdofs[:, :, 0] = 2 * mesh.triangles
        vdofs[:, :, 1] = 2 * mesh.triangles + 1
        np.add.at(nodal, vdofs.ravel(), loc.ravel())
        return self.control_map.apply_transpose(nodal)


class VolumeConstraint:
    """Equality constraint: deformed volume equals the base volume."""

    def __init__(self, base_mesh: TriMesh, control_map):
        self.base_mesh = base_mesh
        self.control_map = control_map
        self.target = base_mesh.volume()
        self._vol_form = forms.FormExpr([(1.0, forms.VolumeOne())])

    def value(self, c):
        disp = self.control_map.apply(c)
        deformed = self.base_mesh.vertices + disp
        return float(signed_areas(deformed, self.base_mesh.triangles).sum()
                     - self.target)

    def gradient(self, c):
        mesh_c = deform(self.base_mesh, self.control_map.apply(c))
        sd = forms.shape_derivative(self._vol_form, mesh_c, {})
        return self.control_map.apply_transpose(sd)


class ReducedFunctional:
    """Objective as a function of the control alone.

    Parameters
    ----------
    base_mesh, control_map
        The undeformed design and the control parametrization.
    problem
        A PDE problem exposing ``solve_state`` / ``solve_adjoint`` /
        ``lagrangian`` (see :mod:`shapeopt.pde`), or None for purely
        geometric objectives that need no state solve.
    objective
        FormExpr over the problem's state fields.
    alpha_reg
        Weight of the spectral penalty added to the objective.
    quality_threshold
        Floor on the per-element area ratio; below it the value is NaN
        without attempting a solve.
    """

    def __init__(self, base_mesh: TriMesh, control_map, problem, objective,
                 alpha_reg=10.0, quality_threshold=0.01):
        if alpha_reg < 0.0:
            raise ParameterError("alpha_reg must be nonnegative")
        self.base_mesh = base_mesh
        self.control_map = control_map
        self.problem = problem
        self.objective = objective
        self.alpha_reg = float(alpha_reg)
        self.quality_threshold = float(quality_threshold)
        self.penalty = SpectralPenalty(base_mesh, control_map)
        self.fixed_markers = control_map.fixed_markers()
        sensitive = getattr(problem, "coordinate_sensitive_markers",
                            frozenset()) if problem is not None else frozenset()
        loose = set(sensitive) - set(self.fixed_markers)
        if loose:
            raise ContractError(
                f"markers {sorted(loose)} carry coordinate-dependent boundary "
                f"data but are movable under the control space; fix them "
                f"(fixed markers: {sorted(self.fixed_markers)})")
        self._warm = None
        self._cache_c = None
        self._cache = None  # (value, objective_value, state, mesh, report)

    def _check(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (self.control_map.dim,):
            raise InputShapeError(
                f"control vector has shape {c.shape}, expected "
                f"({self.control_map.dim},)")
        if not np.isfinite(c).all():
            raise InputShapeError("control vector has non-finite entries")
        return c

    def _evaluate(self, c):
        if self._cache_c is not None and np.array_equal(c, self._cache_c):
            return self._cache
        disp = self.control_map.apply(c)
        report = quality(self.base_mesh, disp)
        if report.min_det_ratio < self.quality_threshold:
            result = (float("nan"), float("nan"), None, None, report)
        elif self.problem is None:
            mesh_c = deform(self.base_mesh, disp)
            obj = forms.assemble_value(self.objective, mesh_c, {})
            val = obj + self.alpha_reg * self.penalty.value(c)
            result = (val, obj, None, mesh_c, report)
        else:
            mesh_c = deform(self.base_mesh, disp)
            state = self.problem.solve_state(mesh_c, initial=self._warm)
            if state.failed_to_solve:
                result = (float("nan"), float("nan"), None, None, report)
            else:
                self._warm = state.warm_start
                obj = forms.assemble_value(self.objective, mesh_c,
                                           state.fields)
                val = obj + self.alpha_reg * self.penalty.value(c)
                result = (val, obj, state, mesh_c, report)
        self._cache_c = c.copy()
        self._cache = result
        return result

    def value(self, c):
        """Objective + regularization, or NaN on any failure."""
        return self._evaluate(self._check(c))[0]

    def objective_value(self, c):
        """The PDE objective alone (without the spectral penalty)."""
        return self._evaluate(self._check(c))[1]

    def quality_of(self, c):
        """Quality report of the displacement encoded by ``c``."""
        return self._evaluate(self._check(c))[4]

    def solution_at(self, c):
        """(deformed mesh, state solution) at a feasible control."""
        val, _, state, mesh_c, _ = self._evaluate(self._check(c))
        if not np.isfinite(val):
            raise ContractError("no solution at an infeasible point")
        return mesh_c, state

    def spectral_penalty(self, c):
        return self.penalty.value(self._check(c))

    def spectral_penalty_gradient(self, c):
        return self.penalty.gradient(self._check(c))

    def gradient(self, c):
        """Adjoint shape gradient pulled back to control coordinates."""
        c = self._check(c)
        val, _, state, mesh_c, _ = self._evaluate(c)
        if not np.isfinite(val):
            raise ContractError(
                "gradient requested at an infeasible point (value is NaN)")
        if self.problem is None:
            lag_form, lag_fields = self.objective, {}
        else:
            dual = self.problem.solve_adjoint(self.objective, state, mesh_c)
            lag_form, lag_fields = self.problem.lagrangian(self.objective,
                                                           state, dual)
        sd = forms.shape_derivative(lag_form, mesh_c, lag_fields,
                                    fixed_markers=self.fixed_markers)
        g = self.control_map.apply_transpose(sd)
        if self.alpha_reg:
            g = g + self.alpha_reg * self.penalty.gradient(c)
        return g
