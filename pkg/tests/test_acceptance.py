"""Acceptance suite: one test per acceptance criterion.

Each test prints a single PASS/FAIL line (visible with ``pytest -s``)
carrying the measured quantities, then asserts at the stated tolerance.
"""

import time

import numpy as np
import pytest

from shapeopt import forms, io
from shapeopt.control import (BSplineControl, NodalControl, bspline_eval_1d,
                              build_control_map)
from shapeopt.errors import (MeshIntegrityError, MshParseError,
                             UnsupportedElementError,
                             UnsupportedMshVersionError)
from shapeopt.fem import TaylorHoodSpace
from shapeopt.functional import ReducedFunctional, VolumeConstraint
from shapeopt.mesh import gen_cantilever, gen_channel
from shapeopt.metric import GramOperator, MetricSpec, assemble_gram
from shapeopt.optim import (ALParams, TRState, augmented_lagrangian_solve,
                            inner_solve)
from shapeopt.pde import (ElasticityProblem, FlowProblem,
                          solve_state_elasticity, solve_state_flow)

RATIO_WINDOW = (3.5, 4.5)
# three halvings; directions are unit in the Gram norm, so the ladder sits
# a decade above the solver noise floor of the smallest remainders
EPSILONS = [1e-3, 5e-4, 2.5e-4, 1.25e-4]


def _status(ok):
    return "PASS" if ok else "FAIL"


def poiseuille(x, y):
    return np.stack([1.0 - 4.0 * y ** 2, np.zeros_like(y)])


def taylor_ok(rf, gram, seed, label, lines):
    rng = np.random.default_rng(seed)
    c0 = np.zeros(rf.control_map.dim)
    j0 = rf.value(c0)
    g0 = rf.gradient(c0)
    d = rng.standard_normal(rf.control_map.dim)
    d /= gram.norm(d)
    gd = float(g0 @ d)
    rem = np.array([abs(rf.value(c0 + e * d) - j0 - e * gd)
                    for e in EPSILONS])
    if rem.max() <= 1e-12 * max(1.0, abs(j0)):
        lines.append(f"  {label}: remainder at rounding level (exact)")
        return True
    ratios = rem[:-1] / np.maximum(rem[1:], 1e-300)
    ok = all(RATIO_WINDOW[0] <= r <= RATIO_WINDOW[1] for r in ratios)
    lines.append(f"  {label}: ratios "
                 + ", ".join(f"{r:.3f}" for r in ratios))
    return ok


def test_criterion_1_derivative_exactness():
    """Taylor tests on all four functionals through both control spaces."""
    t0 = time.perf_counter()
    lines = []
    ok = True

    channel = gen_channel(1.0, 1.0, 10, 6)
    cantilever = gen_cantilever(2.0, 1.0, 12, 6)
    bspline_channel = build_control_map(
        BSplineControl(bbox=((0.15, 0.85), (-0.6, 0.6)), level=(2, 1),
                       order=(2, 2), boundary_regularity=(1, 1),
                       fixed_dims=("x",)), channel)
    nodal_channel = build_control_map(
        NodalControl(fixed_markers=(10, 11)), channel)
    nodal_cant = build_control_map(NodalControl(fixed_markers=(1, 2)),
                                   cantilever)
    bspline_cant = build_control_map(
        BSplineControl(bbox=((0.2, 1.8), (-0.75, 0.75)), level=(2, 1),
                       order=(2, 2), boundary_regularity=(1, 1)), cantilever)

    stokes = FlowProblem(viscosity=1.0, inflow=poiseuille, convection=0.0)
    elast = ElasticityProblem(lam=1.0, mu=1.0, traction=(0.0, -1.0))
    vol = forms.FormExpr([(1.0, forms.VolumeOne())])

    cases = [
        ("dissipation/bspline", channel, bspline_channel, stokes,
         stokes.dissipation_form(), 0.0),
        ("dissipation/nodal", channel, nodal_channel, stokes,
         stokes.dissipation_form(), 0.0),
        ("compliance/nodal", cantilever, nodal_cant, elast,
         elast.compliance_form(), 0.0),
        ("compliance/bspline", cantilever, bspline_cant, elast,
         elast.compliance_form(), 0.0),
        ("volume/bspline", channel, bspline_channel, None, vol, 0.0),
        ("volume/nodal", cantilever, nodal_cant, None, vol, 0.0),
        ("spectral-penalty/bspline", channel, bspline_channel, None,
         vol.scaled(0.0), 3.0),
        ("spectral-penalty/nodal", cantilever, nodal_cant, None,
         vol.scaled(0.0), 3.0),
    ]
    for seed, (label, mesh, cmap, problem, objective, alpha) in \
            enumerate(cases, start=100):
        gram = assemble_gram(MetricSpec("Elasticity"), cmap, mesh)
        rf = ReducedFunctional(mesh, cmap, problem, objective,
                               alpha_reg=alpha)
        ok = taylor_ok(rf, gram, seed, label, lines) and ok

    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 120.0
    print(f"[criterion 1] {_status(ok)}: derivative exactness, "
          f"{len(cases)} taylor tests in {elapsed:.1f}s (< 120s)")
    for line in lines:
        print(line)
    assert ok


def test_criterion_2_adjoint_identity():
    """Elasticity/compliance dual equals -2 u to 1e-10 relative."""
    worst = 0.0
    for mesh in (gen_cantilever(2.0, 1.0, 9, 5),
                 gen_cantilever(1.0, 0.5, 7, 4)):
        problem = ElasticityProblem(lam=1.4, mu=0.8, traction=(0.0, -1.0))
        state = solve_state_elasticity(problem, mesh)
        dual = problem.solve_adjoint(problem.compliance_form(), state,
                                     mesh)["v"]
        u = state.fields["u"].coefs
        worst = max(worst,
                    np.abs(dual.coefs + 2.0 * u).max() / np.abs(u).max())
    ok = worst <= 1e-10
    print(f"[criterion 2] {_status(ok)}: adjoint identity "
          f"max |dual + 2u| / |u| = {worst:.2e} (<= 1e-10)")
    assert ok


def test_criterion_3_channel_flow_oracle():
    """Poiseuille is reproduced to 1e-8 and J = nu*8/3 within 1e-3."""
    mesh = gen_channel(1.0, 1.0, 12, 6)
    results = []
    for convection in (0.0, 1.0):  # Stokes and Navier-Stokes
        problem = FlowProblem(viscosity=0.1, inflow=poiseuille,
                              convection=convection)
        state = solve_state_flow(problem, mesh)
        exact = TaylorHoodSpace(mesh).velocity.interpolate(poiseuille)
        err = np.abs(state.fields["u"].coefs - exact.coefs).max()
        j = forms.assemble_value(problem.dissipation_form(), mesh,
                                 state.fields)
        results.append((convection, err, j))
    target = 0.1 * 8.0 / 3.0
    ok = all(err <= 1e-8 and abs(j - target) <= 1e-3
             for _, err, j in results)
    detail = "; ".join(f"conv={c:g}: |u-poiseuille|={e:.2e}, J={j:.6f}"
                       for c, e, j in results)
    print(f"[criterion 3] {_status(ok)}: channel flow oracle "
          f"(target J={target:.6f}) {detail}")
    assert ok


def _pipe_setup(bend):
    mesh = gen_channel(1.0, 1.0, 30, 10, bend=bend)
    problem = FlowProblem(viscosity=0.1, inflow=poiseuille, convection=1.0)
    spec = BSplineControl(
        bbox=((0.15, 0.85), (-0.75, 0.75 + max(bend, 0.0))), level=(2, 1),
        order=(2, 2), boundary_regularity=(1, 1), fixed_dims=("x",))
    cmap = build_control_map(spec, mesh)
    gram = assemble_gram(MetricSpec("Elasticity"), cmap, mesh)
    rf = ReducedFunctional(mesh, cmap, problem, problem.dissipation_form(),
                           alpha_reg=10.0)
    constraint = VolumeConstraint(mesh, cmap)
    return rf, constraint, gram, cmap


def test_criterion_4_pipe_optimization():
    """Dissipation drops >= 3% at matched volume from a curved channel.

    The initial design is the built-in channel with a vertical
    centerline bend (the 2D stand-in for the curved initial pipe of the
    dissipation benchmark). A straight channel with a matched Poiseuille
    inflow is already the volume-constrained optimum, so no optimizer
    can reduce its dissipation; see the companion test below and the
    decision log.
    """
    t0 = time.perf_counter()
    rf, constraint, gram, cmap = _pipe_setup(bend=0.3)
    result = augmented_lagrangian_solve(
        rf, constraint, gram, ALParams(),
        TRState(radius=1.0, max_iterations=50))
    elapsed = time.perf_counter() - t0
    j0 = rf.objective_value(np.zeros(cmap.dim))
    j1 = rf.objective_value(result.control)
    reduction = 1.0 - j1 / j0
    vol_rel = abs(result.constraint) / constraint.target
    min_det = rf.quality_of(result.control).min_det_ratio
    ok = (reduction >= 0.03 and vol_rel <= 1e-3 and min_det > 0.2
          and result.outer_iterations <= 10 and elapsed < 300.0)
    print(f"[criterion 4] {_status(ok)}: pipe optimization "
          f"J {j0:.5f} -> {j1:.5f} ({100 * reduction:.2f}% >= 3%), "
          f"|vol err|/target = {vol_rel:.2e} (<= 1e-3), "
          f"min_det_ratio = {min_det:.3f} (> 0.2), "
          f"{result.outer_iterations} outer (<= 10), {elapsed:.0f}s (< 300s)")
    assert ok


def test_criterion_4_companion_straight_channel_is_optimal():
    """The straight matched channel admits no 3% improvement.

    Documents why criterion 4 starts from a bent channel: with the
    inflow profile matched to the cross-section, Poiseuille flow is the
    exact discrete solution and the straight channel is the
    volume-constrained minimizer, so the optimizer terminates with an
    essentially unchanged objective.
    """
    rf, constraint, gram, cmap = _pipe_setup(bend=0.0)
    result = augmented_lagrangian_solve(
        rf, constraint, gram, ALParams(max_outer=6),
        TRState(radius=1.0, max_iterations=30))
    j0 = rf.objective_value(np.zeros(cmap.dim))
    j1 = rf.objective_value(result.control)
    vol_rel = abs(result.constraint) / constraint.target
    change = abs(1.0 - j1 / j0)
    ok = change < 0.03 and vol_rel <= 1e-3
    print(f"[criterion 4 companion] {_status(ok)}: straight channel "
          f"J changes by {100 * change:.3f}% (< 3% available), "
          f"|vol err|/target = {vol_rel:.2e}")
    assert ok


def test_criterion_5_cantilever_regularization_experiment():
    """alpha_reg = 10 vs 100: more regularization preserves mesh quality."""
    t0 = time.perf_counter()
    outcomes = {}
    for alpha in (10.0, 100.0):
        mesh = gen_cantilever(2.0, 1.0, 24, 12)
        problem = ElasticityProblem(lam=1.0, mu=1.0, traction=(0.0, -1.0))
        cmap = build_control_map(NodalControl(fixed_markers=(1, 2)), mesh)
        gram = assemble_gram(MetricSpec("Elasticity"), cmap, mesh)
        rf = ReducedFunctional(mesh, cmap, problem, problem.compliance_form(),
                               alpha_reg=alpha)
        constraint = VolumeConstraint(mesh, cmap)
        result = augmented_lagrangian_solve(
            rf, constraint, gram, ALParams(eta0=1e-3),
            TRState(radius=1.0, max_iterations=50))
        exit_code = 0 if result.converged else 2
        outcomes[alpha] = {
            "exit": exit_code,
            "j0": rf.objective_value(np.zeros(cmap.dim)),
            "j1": rf.objective_value(result.control),
            "vol_rel": abs(result.constraint) / constraint.target,
            "vol_abs": abs(result.constraint),
            "min_det": rf.quality_of(result.control).min_det_ratio,
            "reason": result.reason,
        }
    elapsed = time.perf_counter() - t0
    low, high = outcomes[10.0], outcomes[100.0]
    ok = (low["exit"] in (0, 2) and high["exit"] in (0, 2)
          and low["j1"] < low["j0"] and high["j1"] < high["j0"]
          and high["min_det"] >= low["min_det"]
          and low["vol_rel"] <= 1e-3 and high["vol_rel"] <= 1e-3
          and low["vol_abs"] <= 1e-3 and high["vol_abs"] <= 1e-3)
    print(f"[criterion 5] {_status(ok)}: cantilever regularization, "
          f"alpha=10: exit {low['exit']} ({low['reason']}), "
          f"J {low['j0']:.3f}->{low['j1']:.3f}, min_det {low['min_det']:.4f}, "
          f"|vol err| {low['vol_abs']:.1e}; "
          f"alpha=100: exit {high['exit']} ({high['reason']}), "
          f"J {high['j0']:.3f}->{high['j1']:.3f}, "
          f"min_det {high['min_det']:.4f} (>= alpha10), "
          f"|vol err| {high['vol_abs']:.1e}; {elapsed:.0f}s")
    assert ok


def test_criterion_6_nan_robustness():
    """NaN outside a ball only shrinks the trust region, never crashes."""
    t0 = time.perf_counter()

    class NaNBall:
        def value(self, x):
            if np.linalg.norm(x) > 0.05:
                return float("nan")
            return float(x @ x - x[0])

        def gradient(self, x):
            return 2.0 * x - np.array([1.0, 0.0])

    gram = GramOperator.from_matrix(np.eye(2))
    result = inner_solve(NaNBall(), np.zeros(2), gram, TRState(radius=10.0),
                         omega=1e-8)
    elapsed = time.perf_counter() - t0
    ok = (np.isfinite(result.value) and np.isfinite(result.control).all()
          and elapsed < 1.0)
    print(f"[criterion 6] {_status(ok)}: NaN robustness, final value "
          f"{result.value:.6f} finite after {result.iterations} iterations, "
          f"{elapsed * 1e3:.0f}ms (< 1s)")
    assert ok


def test_criterion_7_structural_property_suites():
    """Partition of unity, Gram SPD, adjoint identity, parsers, VTK bytes."""
    rng = np.random.default_rng(0)
    checks = []

    # B-spline partition of unity and boundary-regularity vanishing
    xs = np.linspace(0.0, 1.0, 41)
    pou = np.abs(bspline_eval_1d(2, 3, 0, (0.0, 1.0), xs).sum(axis=1) - 1.0)
    checks.append(("bspline partition of unity", pou.max() <= 1e-12))
    ends = bspline_eval_1d(3, 2, 1, (0.0, 1.0), np.array([0.0, 1.0]))
    checks.append(("bspline boundary vanishing", np.abs(ends).max() <= 1e-12))

    # Gram SPD on 100 random vectors
    mesh = gen_channel(1.0, 1.0, 6, 4)
    cmap = build_control_map(NodalControl(fixed_markers=(10, 11)), mesh)
    gram = assemble_gram(MetricSpec("Elasticity"), cmap, mesh)
    spd = True
    for _ in range(100):
        c = rng.standard_normal(gram.dim)
        spd = spd and gram.inner(c, c) > 0.0
    checks.append(("gram SPD on 100 vectors", spd))

    # control-map adjoint identity to 1e-13
    adjoint_ok = True
    for _ in range(25):
        c = rng.standard_normal(cmap.dim)
        g = rng.standard_normal(2 * mesh.n_vertices)
        lhs = float(cmap.apply(c).reshape(-1) @ g)
        rhs = float(c @ cmap.apply_transpose(g))
        adjoint_ok = adjoint_ok and \
            abs(lhs - rhs) <= 1e-13 * max(abs(lhs), abs(rhs), 1.0)
    checks.append(("control map adjoint identity", adjoint_ok))

    # MSH fixture suite including the error paths
    good = ("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
            "$Nodes\n3\n1 0 0 0\n2 1 0 0\n3 0 1 0\n$EndNodes\n"
            "$Elements\n2\n1 2 2 0 0 1 2 3\n2 1 1 10 1 2\n$EndElements\n")
    parsed = io.parse_msh(good)
    msh_ok = parsed.n_triangles == 1 and set(parsed.edge_markers) == {10}
    for bad, exc in [
            (good.replace("2.2 0 8", "4.1 0 8"), UnsupportedMshVersionError),
            (good.replace("2 1 1 10 1 2", "2 9 1 10 1 2"),
             UnsupportedElementError),
            (good.replace("1 2 2 0 0 1 2 3", "1 2 2 0 0 1 2 7"),
             MeshIntegrityError)]:
        try:
            io.parse_msh(bad)
            msh_ok = False
        except exc:
            pass
        except MshParseError:
            msh_ok = False
    lines = good.splitlines()
    for n in range(len(lines)):
        try:
            io.parse_msh("\n".join(lines[:n]))
            msh_ok = False
        except MshParseError:
            pass
    checks.append(("msh parser fixtures and error paths", msh_ok))

    # VTK byte determinism
    fields = {"f": rng.standard_normal(mesh.n_vertices)}
    checks.append(("vtk byte determinism",
                   io.write_vtk(mesh, fields) == io.write_vtk(mesh, fields)))

    ok = all(flag for _, flag in checks)
    detail = "; ".join(f"{name}: {_status(flag)}" for name, flag in checks)
    print(f"[criterion 7] {_status(ok)}: structural properties ({detail})")
    assert ok


def test_criterion_8_toy_kkt():
    """1-dof augmented Lagrangian reaches x* = 1, lambda* = -2 within 1e-4."""
    t0 = time.perf_counter()

    class ToyRF:
        def value(self, x):
            return float(x[0] ** 2)

        def gradient(self, x):
            return np.array([2.0 * x[0]])

    class ToyConstraint:
        def value(self, x):
            return float(x[0] - 1.0)

        def gradient(self, x):
            return np.array([1.0])

    gram = GramOperator.from_matrix(np.eye(1))
    result = augmented_lagrangian_solve(ToyRF(), ToyConstraint(), gram,
                                        ALParams(), TRState(), x0=np.zeros(1))
    elapsed = time.perf_counter() - t0
    x_err = abs(result.control[0] - 1.0)
    lam_err = abs(result.multiplier + 2.0)
    ok = x_err <= 1e-4 and lam_err <= 1e-4 and elapsed < 1.0
    print(f"[criterion 8] {_status(ok)}: toy KKT |x-1|={x_err:.2e}, "
          f"|lambda+2|={lam_err:.2e} (<= 1e-4), {elapsed * 1e3:.0f}ms (< 1s)")
    assert ok
