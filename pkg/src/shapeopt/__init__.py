"""2D moving-mesh shape optimization with adjoint shape gradients.

The toolkit deforms a triangular mesh through a control space of
displacement fields (nodal or tensor B-spline), computes objectives
constrained by Navier-Stokes or linear elasticity, differentiates them
exactly in the discrete moving-mesh sense, and optimizes with an
augmented-Lagrangian trust-region method under a volume constraint.
"""

from .control import (BSplineControl, ControlMap, NodalControl,
                      bspline_eval_1d, build_control_map)
from .errors import (ConfigurationError, ContractError, InputShapeError,
                     MeshIntegrityError, MetricError, MshParseError,
                     ParameterError, ShapeOptError, SolverError,
                     UnsupportedElementError, UnsupportedMshVersionError)
from .fem import (Field, FunctionSpace, TaylorHoodSpace, apply_dirichlet,
                  build_space, quadrature, solve_linear)
from .forms import (BoundaryTraction, ComplianceEnergy, Convection,
                    DissipationEnergy, DivConstraint, FormExpr, GradGrad,
                    PressureDiv, StressStrain, SymGradSymGrad, VolumeOne,
                    assemble, assemble_jacobian, assemble_partial,
                    assemble_value, shape_derivative, state_partial)
from .functional import ReducedFunctional, SpectralPenalty, VolumeConstraint
from .io import (parse_mesh_native, parse_msh, write_history_csv,
                 write_mesh_native, write_vtk)
from .mesh import (ElementGeometry, QualityReport, TriMesh, deform,
                   det_ratios, gen_cantilever, gen_channel, quality)
from .metric import GramOperator, MetricSpec, assemble_gram, riesz_descent
from .optim import (ALParams, ALState, AugmentedObjective, ConvergenceRecord,
                    InnerResult, TRState, augmented_lagrangian_solve,
                    inner_solve)
from .pde import (ElasticityProblem, FlowProblem, StateSolution,
                  solve_adjoint, solve_state_elasticity, solve_state_flow)

__version__ = "0.1.0"

__all__ = [
    "ALParams", "ALState", "AugmentedObjective", "BSplineControl",
    "BoundaryTraction", "ComplianceEnergy", "ConfigurationError",
    "ControlMap", "Convection", "ConvergenceRecord", "ContractError",
    "DissipationEnergy", "DivConstraint", "ElasticityProblem",
    "ElementGeometry", "Field", "FlowProblem", "FormExpr", "FunctionSpace",
    "GradGrad", "GramOperator", "InnerResult", "InputShapeError",
    "MeshIntegrityError", "MetricError", "MetricSpec", "MshParseError",
    "NodalControl", "ParameterError", "PressureDiv", "QualityReport",
    "ReducedFunctional", "ShapeOptError", "SolverError", "SpectralPenalty",
    "StateSolution", "StressStrain", "SymGradSymGrad", "TRState",
    "TaylorHoodSpace", "TriMesh", "UnsupportedElementError",
    "UnsupportedMshVersionError", "VolumeConstraint", "VolumeOne",
    "apply_dirichlet", "assemble", "assemble_gram", "assemble_jacobian",
    "assemble_partial", "assemble_value", "augmented_lagrangian_solve",
    "bspline_eval_1d", "build_control_map", "build_space", "deform",
    "det_ratios", "gen_cantilever", "gen_channel", "inner_solve",
    "parse_mesh_native", "parse_msh", "quadrature", "quality",
    "riesz_descent", "shape_derivative", "solve_adjoint",
    "solve_linear", "solve_state_elasticity", "solve_state_flow",
    "state_partial", "write_history_csv", "write_mesh_native", "write_vtk",
]
