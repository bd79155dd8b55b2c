"""
crbc: Crouzeix-Raviart finite elements for box-constrained Dirichlet
boundary control of the Poisson equation on convex polygons.

The state and adjoint are discretized with nonconforming piecewise linears
(one edge-mean degree of freedom per edge), the control with piecewise
constants on the boundary.  Controls are tied to continuous boundary traces
through the mean-value projection and its inverse, which exists exactly
when the boundary has an odd number of edges; the library enforces that by
a one-edge mesh adjustment.  The box-constrained minimizer is computed by
projected gradient iteration driven by an adjoint-based reduced gradient,
and the package ships manufactured problems, a dense small-instance oracle
and convergence-study tooling around it.
"""

from .mesh import (Mesh, MeshError, ensure_odd_boundary, export_text,
                   refine_uniform, regular_polygon_corners,
                   triangulate_polygon_fan, triangulate_unit_square, validate)
from .linalg import (CgNonConvergence, CyclicBidiagonal, SingularMatrixError,
                     SolverError, SparseMatrix, cg_solve,
                     cyclic_bidiagonal_solve, dense_eig_max, dense_solve)
from .fespace import (BoundaryControl, BoundaryTrace, CrFunction,
                      EnrichedFunction, PiecewiseLinear, W1Function, a_pw,
                      enrich, eval_cr, interpolate_cr, quadrature_edge,
                      quadrature_triangle, tilde_extension)
from .assembly import (AssembledForms, AssemblyError, assemble_boundary_mass,
                       assemble_load, assemble_mass, assemble_p0_matrix,
                       assemble_stiffness)
from .control_ops import (BoxBounds, clamp_box, p0_project, p1_tilde,
                          p1_tilde_operator_norm)
from .optimizer import (DiscreteProblem, ExactSolution, OptimalitySolution,
                        OptimizationError, ProblemSpec, QpOracleSizeError,
                        StateSolution, discrete_flux, kkt_residual,
                        objective_value, qp_oracle, reduced_gradient,
                        solve_adjoint, solve_control, solve_state)
from .harness import (ConvergenceTable, MeshFamily, StudyError,
                      control_error_vs_control, control_error_vs_function,
                      convergence_study, eoc, manufactured_active,
                      manufactured_inactive, operator_report,
                      orthogonality_max_violation, reference_solution,
                      round_trip_defect, state_error_energy, state_error_l2,
                      state_error_vs_reference, trace_error_vs_function)
from .cli import cli_main

__version__ = "0.1.0"
