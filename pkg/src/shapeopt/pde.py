"""State solvers (Navier-Stokes / Stokes, linear elasticity) and adjoints.

Solver failures never raise: they set ``failed_to_solve`` on the
returned :class:`StateSolution`, and the reduced functional converts
that flag into a NaN objective so the optimizer backs off. Only the
adjoint refuses to run on a failed state, since its contract requires a
converged primal solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import forms
from .errors import ConfigurationError, ContractError, ParameterError, SolverError
from .fem import (Field, TaylorHoodSpace, build_space, dirichlet_data,
                  row_replace, solve_linear)
from .mesh import ElementGeometry, TriMesh

NEWTON_MAX_ITERATIONS = 100
NEWTON_RTOL = 1e-10
NEWTON_ATOL = 1e-12


@dataclass
class StateSolution:
    """Result of a state solve.

    ``fields`` maps slot names used in the problem's residual form to
    finite element fields (``u``/``p`` for flow, ``u`` for elasticity);
    it is None when ``failed_to_solve`` is set, so values from a failed
    solve can never leak downstream.
    """

    fields: dict | None
    converged: bool
    iterations: int
    failed_to_solve: bool
    warm_start: np.ndarray | None = field(default=None, repr=False)


def _mesh_is_tangled(mesh):
    try:
        ElementGeometry(mesh)
    except ParameterError:
        return True
    return False


def _failed(iterations=0):
    return StateSolution(fields=None, converged=False, iterations=iterations,
                         failed_to_solve=True)


class FlowProblem:
    """Incompressible Navier-Stokes flow through a marked channel.

    Taylor-Hood discretization with a Poiseuille-style Dirichlet inflow,
    no-slip walls and a natural (do-nothing) outflow boundary which also
    fixes the pressure level. ``convection=0`` gives the Stokes limit.

    The viscous term uses the full-gradient pairing
    ``viscosity * grad(u):grad(v)``, whose natural outflow condition is
    satisfied exactly by Poiseuille flow in a straight channel (set
    ``viscous_form="sym"`` for the symmetric-gradient variant, whose
    do-nothing boundary differs by a tangential traction).
    """

    state_names = ("u", "p")
    test_names = ("v", "q")

    def __init__(self, viscosity, inflow, inflow_marker=10,
                 wall_markers=(12, 13), outflow_marker=11, convection=1.0,
                 viscous_form="grad"):
        if viscosity <= 0.0:
            raise ParameterError("viscosity must be positive")
        if viscous_form not in ("grad", "sym"):
            raise ParameterError("viscous_form must be 'grad' or 'sym'")
        if int(outflow_marker) == int(inflow_marker) \
                or int(outflow_marker) in {int(m) for m in wall_markers}:
            raise ConfigurationError(
                "outflow marker collides with a Dirichlet marker; without a "
                "natural outflow boundary the pressure level is undetermined")
        self.viscosity = float(viscosity)
        self.inflow = inflow
        self.inflow_marker = int(inflow_marker)
        self.wall_markers = tuple(int(m) for m in wall_markers)
        self.outflow_marker = int(outflow_marker)
        self.convection = float(convection)
        self.viscous_form = viscous_form

    # markers whose Dirichlet data varies in space; the control space must
    # keep them immobile or the discrete adjoint identity breaks
    @property
    def coordinate_sensitive_markers(self):
        return {self.inflow_marker}

    def residual_form(self):
        if self.viscous_form == "grad":
            viscous = forms.GradGrad("u", "v", self.viscosity)
        else:
            viscous = forms.SymGradSymGrad("u", "v", self.viscosity)
        return forms.FormExpr([
            (1.0, viscous),
            (self.convection, forms.Convection("v", "u")),
            (1.0, forms.PressureDiv("p", "v")),
            (1.0, forms.DivConstraint("q", "u")),
        ])

    def dissipation_form(self):
        """The kinetic-energy dissipation objective for this problem."""
        return forms.FormExpr([(1.0, forms.DissipationEnergy("u",
                                                             self.viscosity))])

    def _check_markers(self, mesh):
        present = mesh.marker_set()
        wanted = {self.inflow_marker, self.outflow_marker, *self.wall_markers}
        missing = wanted - present
        if missing:
            raise ConfigurationError(f"mesh lacks boundary markers {sorted(missing)}")
        extra = present - wanted
        if extra:
            raise ConfigurationError(
                f"mesh has unassigned boundary markers {sorted(extra)}")

    def _bc(self):
        bcs = {self.inflow_marker: self.inflow}
        for m in self.wall_markers:
            bcs[m] = np.zeros(2)
        return bcs

    def _newton_system(self, space, mixed):
        mesh = space.mesh
        u, p = space.split(mixed)
        fields = {"u": u, "p": p,
                  "v": Field.zero(space.velocity),
                  "q": Field.zero(space.pressure)}
        res_form = self.residual_form()
        r_v = forms.assemble_partial(res_form, mesh, fields, "v")
        r_q = forms.assemble_partial(res_form, mesh, fields, "q")
        residual = np.concatenate([r_v, r_q])
        return fields, res_form, residual

    def _newton_jacobian(self, space, fields, res_form):
        mesh = space.mesh
        a_vu = forms.assemble_jacobian(res_form, mesh, fields, "v", "u")
        a_vp = forms.assemble_jacobian(res_form, mesh, fields, "v", "p")
        a_qu = forms.assemble_jacobian(res_form, mesh, fields, "q", "u")
        return sp.bmat([[a_vu, a_vp], [a_qu, None]], format="csr")

    def solve_state(self, mesh: TriMesh, initial=None) -> StateSolution:
        """Newton iteration on the discrete residual (at most 100 steps)."""
        self._check_markers(mesh)
        if _mesh_is_tangled(mesh):
            return _failed()
        space = TaylorHoodSpace(mesh)
        bc_dofs, bc_vals = dirichlet_data(space.velocity, self._bc())

        mixed = np.zeros(space.dim)
        if initial is not None and initial.shape == (space.dim,) \
                and np.isfinite(initial).all():
            mixed = np.array(initial)
        mixed[bc_dofs] = bc_vals

        r0_norm = None
        for iteration in range(NEWTON_MAX_ITERATIONS + 1):
            fields, res_form, residual = self._newton_system(space, mixed)
            residual[bc_dofs] = 0.0
            rnorm = np.linalg.norm(residual)
            if not np.isfinite(rnorm):
                return _failed(iteration)
            if r0_norm is None:
                r0_norm = rnorm
            if rnorm <= max(NEWTON_RTOL * r0_norm, NEWTON_ATOL):
                u, p = space.split(mixed)
                return StateSolution(fields={"u": u, "p": p}, converged=True,
                                     iterations=iteration,
                                     failed_to_solve=False, warm_start=mixed)
            if iteration == NEWTON_MAX_ITERATIONS:
                return _failed(iteration)
            jac = self._newton_jacobian(space, fields, res_form)
            jac, rhs = row_replace(jac, -residual, bc_dofs,
                                   np.zeros(len(bc_dofs)))
            try:
                delta = solve_linear(jac, rhs)
            except SolverError:
                return _failed(iteration)
            mixed = mixed + delta

    def solve_adjoint(self, objective: forms.FormExpr, state: StateSolution,
                      mesh: TriMesh) -> dict:
        """Transposed-Jacobian solve with homogeneous Dirichlet dual bc."""
        if state.failed_to_solve or state.fields is None:
            raise ContractError("cannot solve the adjoint of a failed state")
        space = TaylorHoodSpace(mesh)
        fields = {"u": state.fields["u"], "p": state.fields["p"],
                  "v": Field.zero(space.velocity),
                  "q": Field.zero(space.pressure)}
        res_form = self.residual_form()
        jac = self._newton_jacobian(space, fields, res_form)
        bc_dofs, _ = dirichlet_data(space.velocity, self._bc())
        jac, _ = row_replace(jac, np.zeros(space.dim), bc_dofs,
                             np.zeros(len(bc_dofs)))
        rhs = -np.concatenate([
            forms.assemble_partial(objective, mesh, fields, "u"),
            forms.assemble_partial(objective, mesh, fields, "p")])
        adj, rhs = row_replace(jac.T.tocsr(), rhs, bc_dofs,
                               np.zeros(len(bc_dofs)))
        dual = solve_linear(adj, rhs)
        dual_u, dual_p = space.split(dual)
        return {"v": dual_u, "q": dual_p}

    def lagrangian(self, objective, state, dual):
        """Form and fields of J + <residual, dual> for shape differentiation."""
        form = objective + self.residual_form()
        fields = {"u": state.fields["u"], "p": state.fields["p"],
                  "v": dual["v"], "q": dual["q"]}
        return form, fields


class ElasticityProblem:
    """Linear elasticity of a clamped structure under a fixed surface load.

    P1 vector displacement, clamped on ``clamped_marker``, dead traction
    ``g`` on ``traction_marker``. Lame constants default to 1 (material
    data is a configuration default, not a literature value).
    """

    state_names = ("u",)
    test_names = ("v",)

    def __init__(self, lam=1.0, mu=1.0, traction=(0.0, -1.0),
                 clamped_marker=1, traction_marker=2, free_marker=3):
        if mu <= 0.0 or lam < 0.0:
            raise ParameterError("need mu > 0 and lam >= 0")
        self.lam = float(lam)
        self.mu = float(mu)
        self.traction = traction
        self.clamped_marker = int(clamped_marker)
        self.traction_marker = int(traction_marker)
        self.free_marker = int(free_marker)

    @property
    def coordinate_sensitive_markers(self):
        return {self.traction_marker}

    def residual_form(self):
        return forms.FormExpr([
            (1.0, forms.StressStrain("u", "v", self.lam, self.mu)),
            (-1.0, forms.BoundaryTraction(self.traction, "v",
                                          self.traction_marker)),
        ])

    def compliance_form(self):
        """The compliance objective for this problem."""
        return forms.FormExpr([(1.0, forms.ComplianceEnergy("u", self.lam,
                                                            self.mu))])

    def _check_markers(self, mesh):
        present = mesh.marker_set()
        wanted = {self.clamped_marker, self.traction_marker, self.free_marker}
        missing = {self.clamped_marker, self.traction_marker} - present
        if missing:
            raise ConfigurationError(f"mesh lacks boundary markers {sorted(missing)}")
        extra = present - wanted
        if extra:
            raise ConfigurationError(
                f"mesh has unassigned boundary markers {sorted(extra)}")

    def solve_state(self, mesh: TriMesh, initial=None) -> StateSolution:
        """One direct linear solve; failure maps to ``failed_to_solve``."""
        del initial  # linear problem, warm starts are pointless
        self._check_markers(mesh)
        if _mesh_is_tangled(mesh):
            return _failed()
        space = build_space(mesh, "P1-vector2")
        fields = {"u": Field.zero(space), "v": Field.zero(space)}
        res_form = self.residual_form()
        stiff = forms.assemble_jacobian(res_form, mesh, fields, "v", "u")
        rhs = -forms.assemble_partial(res_form, mesh, fields, "v")
        bc_dofs, bc_vals = dirichlet_data(space, {self.clamped_marker:
                                                  np.zeros(2)})
        stiff, rhs = row_replace(stiff, rhs, bc_dofs, bc_vals)
        try:
            coefs = solve_linear(stiff, rhs)
        except SolverError:
            return _failed()
        return StateSolution(fields={"u": Field(space, coefs)},
                             converged=True, iterations=1,
                             failed_to_solve=False, warm_start=coefs)

    def solve_adjoint(self, objective, state, mesh) -> dict:
        if state.failed_to_solve or state.fields is None:
            raise ContractError("cannot solve the adjoint of a failed state")
        space = state.fields["u"].space
        fields = {"u": state.fields["u"], "v": Field.zero(space)}
        res_form = self.residual_form()
        stiff = forms.assemble_jacobian(res_form, mesh, fields, "v", "u")
        bc_dofs, _ = dirichlet_data(space, {self.clamped_marker: np.zeros(2)})
        stiff, _ = row_replace(stiff, np.zeros(space.dim), bc_dofs,
                               np.zeros(len(bc_dofs)))
        rhs = -forms.assemble_partial(objective, mesh, fields, "u")
        adj, rhs = row_replace(stiff.T.tocsr(), rhs, bc_dofs,
                               np.zeros(len(bc_dofs)))
        dual = solve_linear(adj, rhs)
        return {"v": Field(space, dual)}

    def lagrangian(self, objective, state, dual):
        form = objective + self.residual_form()
        fields = {"u": state.fields["u"], "v": dual["v"]}
        return form, fields


def solve_state_flow(problem: FlowProblem, mesh, initial=None):
    return problem.solve_state(mesh, initial=initial)


def solve_state_elasticity(problem: ElasticityProblem, mesh):
    return problem.solve_state(mesh)


def solve_adjoint(problem, objective, state, mesh):
    return problem.solve_adjoint(objective, state, mesh)
