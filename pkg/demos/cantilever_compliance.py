# Compliance minimization of a cantilever, and why regularization matters
# ========================================================================
#
# A rectangular cantilever is clamped at the wall (marker 1) and pulled
# down by a dead surface load on its right edge (marker 2). We minimize
# the compliance int sigma(u):eps(u) dx at fixed material volume by
# moving the free top and bottom boundaries (marker 3).
#
# The interesting part is the spectral regularization weight. With a
# weight of 10 the optimizer chases compliance hard and squashes a
# boundary triangle nearly flat; the quality guard then returns NaN, the
# trust region collapses, and the run stalls early. Raising the weight
# to 100 penalizes the distortion enough that the mesh stays healthy.

import pathlib

from shapeopt import (ALParams, ElasticityProblem, MetricSpec, NodalControl,
                      ReducedFunctional, TRState, VolumeConstraint,
                      assemble_gram, augmented_lagrangian_solve,
                      build_control_map, det_ratios, gen_cantilever, io)

outdir = pathlib.Path("demos_output/cantilever")
outdir.mkdir(parents=True, exist_ok=True)


def optimize(alpha_reg):
    mesh = gen_cantilever(2.0, 1.0, 24, 12)
    problem = ElasticityProblem(lam=1.0, mu=1.0, traction=(0.0, -1.0))

    # Nodal control: every vertex may move, except those on the clamped
    # wall and the loaded edge. The metric is the elasticity inner
    # product, which tends to propagate boundary motion smoothly into
    # the interior.
    control = build_control_map(NodalControl(fixed_markers=(1, 2)), mesh)
    gram = assemble_gram(MetricSpec("Elasticity"), control, mesh)

    rf = ReducedFunctional(mesh, control, problem, problem.compliance_form(),
                           alpha_reg=alpha_reg)
    constraint = VolumeConstraint(mesh, control)
    result = augmented_lagrangian_solve(
        rf, constraint, gram, ALParams(eta0=1e-3),
        TRState(radius=1.0, max_iterations=50))

    j0 = rf.objective_value(control.zero_control())
    j1 = rf.objective_value(result.control)
    quality = rf.quality_of(result.control)
    mesh_final, state = rf.solution_at(result.control)
    name = f"final_alpha{int(alpha_reg)}"
    (outdir / f"{name}.vtk").write_bytes(io.write_vtk(
        mesh_final, {"displacement": state.fields["u"].vertex_values()},
        {"detDT": det_ratios(mesh, control.apply(result.control))}))
    (outdir / f"history_alpha{int(alpha_reg)}.csv").write_bytes(
        io.write_history_csv(result.history))
    return j0, j1, quality, result


print(f"{'alpha':>6} {'J initial':>10} {'J final':>10} {'reduction':>10} "
      f"{'min detDT':>10} {'termination':>16}")
for alpha in (10.0, 100.0):
    j0, j1, quality, result = optimize(alpha)
    print(f"{alpha:6.0f} {j0:10.4f} {j1:10.4f} "
          f"{100 * (1 - j1 / j0):9.2f}% {quality.min_det_ratio:10.4f} "
          f"{result.reason:>16}")

print()
print("With alpha=10 the run dives fast but ends on a nearly degenerate")
print("element (min detDT around 0.01): the same squashed-corner failure")
print("mode the regularization was introduced for. With alpha=100 the")
print("element quality stays near 1 and the optimizer trades a little")
print(f"compliance for a usable mesh. Outputs in {outdir}/.")
