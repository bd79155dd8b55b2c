"""
The discrete boundary control problem and its solvers.

For a control u (piecewise constant on the boundary) the discrete state is
assembled from three pieces: the source part in the interior-edge CR space,
the zero-extended lift of the trace associated with u, and the interior-edge
correction that makes the broken form vanish against all interior test
functions.  The tracking objective plus the trace regularization

    J(u) = 1/2 ||y(u) - y_d||^2 + alpha/2 ||lift(u)||^2_boundary

is a strictly convex quadratic in u.  Differentiating it (chain rule through
the state equation and the adjoint) gives the reduced gradient whose trace
representation is ``alpha * lift(u) - flux``, where the flux is the
variational normal derivative recovered from the adjoint; the sign is fixed
here by the derivation and is validated against central finite differences
of J in the test-suite.

The minimizer over the admissible box is computed by projected gradient
iteration with Armijo backtracking; an optional Nesterov-style extrapolation
(default on, with a monotone fallback to the plain step) cuts the iteration
count from O(kappa) to O(sqrt(kappa)) on fine meshes while preserving
feasible iterates and a non-increasing objective.  A small-instance dense
QP solver built from one state solve per control basis vector serves as an
independent cross-check.

Data functions (source, desired state) are vectorized callables mapping
point arrays of shape (n, 2) to value arrays of shape (n,).
"""

import numpy as np
import scipy.linalg

from .assembly import AssembledForms, LOAD_QUADRATURE_ORDER, assemble_load
from .control_ops import BoxBounds, clamp_box
from .fespace import (BoundaryControl, BoundaryTrace, CrFunction,
                      quadrature_triangle, tilde_extension, triangle_points)
from .linalg import (SparseFactorization, cg_solve, cyclic_bidiagonal_solve)


class OptimizationError(Exception):
    """Projected gradient failed to converge; carries the last iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class QpOracleSizeError(Exception):
    """The dense oracle refuses problems with too many boundary edges."""


class ExactSolution:
    """
    Closed-form optimal triple for manufactured problems.  All members are
    optional; ``control`` and ``flux`` are functions of boundary arclength,
    the others are functions of points (n, 2).
    """

    def __init__(self, control=None, flux=None, state=None,
                 state_gradient=None, adjoint=None):
        self.control = control
        self.flux = flux
        self.state = state
        self.state_gradient = state_gradient
        self.adjoint = adjoint


class ProblemSpec:
    """
    One instance of the boundary control problem.

    Parameters
    ----------
    mesh : Mesh or None
        Discretization; studies bind meshes level by level via `with_mesh`.
    alpha : float
        Regularization weight, positive.
    bounds : BoxBounds
        Admissible control interval.
    f, y_d : callable or None
        Source and desired state (None means zero).
    exact : ExactSolution, optional
    """

    def __init__(self, mesh, alpha, bounds, f=None, y_d=None, exact=None,
                 name=""):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if not isinstance(bounds, BoxBounds):
            bounds = BoxBounds(*bounds)
        self.mesh = mesh
        self.alpha = float(alpha)
        self.bounds = bounds
        self.f = f
        self.y_d = y_d
        self.exact = exact
        self.name = name
        self._workspace = None

    def with_mesh(self, mesh):
        return ProblemSpec(mesh, self.alpha, self.bounds, self.f, self.y_d,
                           self.exact, self.name)

    def workspace(self):
        if self.mesh is None:
            raise ValueError("problem has no mesh bound; use with_mesh")
        if self._workspace is None:
            self._workspace = DiscreteProblem(self)
        return self._workspace


class StateSolution:
    """
    Discrete state split into its defining parts.

    ``composite`` is the full CR coefficient vector; by construction its
    boundary edge means reproduce the control exactly.
    """

    def __init__(self, control, trace, z_tilde, y_f, y_0, composite):
        self.control = control
        self.trace = trace
        self.z_tilde = z_tilde
        self.y_f = y_f
        self.y_0 = y_0
        self.composite = composite

    def boundary_mean_defect(self):
        """Max deviation of the composite boundary means from the control."""
        got = self.composite.boundary_coefficients()
        return float(np.abs(got - self.control.coefficients).max(initial=0.0))


class OptimalitySolution:
    """Converged control with state, adjoint, flux and the iteration log."""

    def __init__(self, control, state, adjoint, flux, objective, kkt_residual,
                 history, iterations, converged):
        self.control = control
        self.state = state
        self.adjoint = adjoint
        self.flux = flux
        self.objective = objective
        self.kkt_residual = kkt_residual
        self.history = history
        self.iterations = iterations
        self.converged = converged


class DiscreteProblem:
    """
    Per-mesh workspace: assembled forms, factorizations and the data
    moments every solve reuses.

    The same triangle quadrature rule (order 4) is used for every integral
    involving the data functions -- the objective, the adjoint right-hand
    side and the flux right-hand side -- so the reduced gradient is the
    exact derivative of the implemented objective.
    """

    def __init__(self, problem, solver="direct"):
        mesh = problem.mesh
        self.problem = problem
        self.mesh = mesh
        self.solver = solver
        self.forms = AssembledForms(mesh)
        self.interior = self.forms.interior_edges
        self._factor = None
        if solver == "direct":
            self._factor = SparseFactorization(self.forms.stiffness_interior)
        self._m_gamma_cho = scipy.linalg.cho_factor(self.forms.boundary_mass)
        self.load_f = (np.zeros(mesh.n_edges) if problem.f is None
                       else assemble_load(mesh, problem.f))
        self.load_yd = (np.zeros(mesh.n_edges) if problem.y_d is None
                        else assemble_load(mesh, problem.y_d))
        self.yd_square = self._data_square_integral(problem.y_d)
        self.yd_vertex = self._vertex_moments(problem.y_d)
        self._y_f_interior = None

    # -- data moments -------------------------------------------------

    def _data_square_integral(self, func):
        if func is None:
            return 0.0
        bary, w = quadrature_triangle(LOAD_QUADRATURE_ORDER)
        pts = triangle_points(self.mesh, bary)
        vals = np.asarray(func(pts.reshape(-1, 2)), dtype=float)
        vals = vals.reshape(self.mesh.n_triangles, len(w))
        return float(np.sum(self.mesh.areas * (vals ** 2 @ w)))

    def _vertex_moments(self, func):
        out = np.zeros(self.mesh.n_vertices)
        if func is None:
            return out
        bary, w = quadrature_triangle(LOAD_QUADRATURE_ORDER)
        pts = triangle_points(self.mesh, bary)
        vals = np.asarray(func(pts.reshape(-1, 2)), dtype=float)
        vals = vals.reshape(self.mesh.n_triangles, len(w))
        contrib = np.einsum("q,tq,qi->ti", w, vals, bary) \
            * self.mesh.areas[:, None]
        np.add.at(out, self.mesh.triangles.ravel(), contrib.ravel())
        return out

    # -- elementary solves ----------------------------------------------

    def solve_interior(self, rhs):
        """Solve the interior-edge stiffness system."""
        if self._factor is not None:
            return self._factor.solve(rhs)
        return cg_solve(self.forms.stiffness_interior, rhs, tol=1e-13).x

    def _expand_interior(self, values):
        full = np.zeros(self.mesh.n_edges)
        full[self.interior] = values
        return full

    def lift_control(self, u):
        """Trace, zero extension and CR expansion of the control lift."""
        b = self.forms.p0_matrix
        z = cyclic_bidiagonal_solve(b.diag, b.offdiag, u.coefficients)
        trace = BoundaryTrace(self.mesh, z)
        z_tilde = tilde_extension(trace)
        c_z = self.forms.vertex_to_cr @ z_tilde.coefficients
        return trace, z_tilde, c_z

    def solve_state(self, u, include_source=True):
        trace, z_tilde, c_z = self.lift_control(u)
        if include_source and np.any(self.load_f):
            if self._y_f_interior is None:
                self._y_f_interior = self.solve_interior(
                    self.load_f[self.interior])
            y_f = self._expand_interior(self._y_f_interior)
        else:
            y_f = np.zeros(self.mesh.n_edges)
        rhs0 = -(self.forms.stiffness @ c_z)[self.interior]
        y_0 = self._expand_interior(self.solve_interior(rhs0))
        composite = CrFunction(self.mesh, y_f + y_0 + c_z)
        return StateSolution(u, trace, z_tilde,
                             CrFunction(self.mesh, y_f),
                             CrFunction(self.mesh, y_0), composite)

    def solve_adjoint(self, state, include_data=True):
        rhs = self.forms.mass_diag * state.composite.coefficients
        if include_data:
            rhs = rhs - self.load_yd
        xi = self._expand_interior(self.solve_interior(rhs[self.interior]))
        return CrFunction(self.mesh, xi)

    def flux(self, adjoint, state, include_data=True):
        a_term = self.forms.vertex_to_cr.matvec_transpose(
            self.forms.stiffness @ adjoint.coefficients)
        m_term = self.forms.cr_vertex_mass.matvec_transpose(
            state.composite.coefficients)
        if include_data:
            m_term = m_term - self.yd_vertex
        rhs = (a_term - m_term)[self.mesh.boundary_cycle_vertices]
        theta = scipy.linalg.cho_solve(self._m_gamma_cho, rhs)
        return BoundaryTrace(self.mesh, theta)

    # -- objective and gradient ------------------------------------------

    def trace_gram(self, z):
        """Apply the boundary trace mass matrix to cycle-vertex coefficients."""
        return self.forms.boundary_mass @ z

    def objective_from_state(self, state):
        y = state.composite.coefficients
        tracking = (y @ (self.forms.mass_diag * y)
                    - 2.0 * (y @ self.load_yd) + self.yd_square)
        z = state.trace.coefficients
        reg = z @ self.trace_gram(z)
        return 0.5 * tracking + 0.5 * self.problem.alpha * reg

    def objective(self, u):
        return self.objective_from_state(self.solve_state(u))

    def gradient(self, u, state=None, include_data=True):
        """
        Riesz representative of the derivative of J in the
        piecewise-constant boundary metric, plus the pieces it is made of.
        """
        if state is None:
            state = self.solve_state(u, include_source=include_data)
        adjoint = self.solve_adjoint(state, include_data=include_data)
        theta = self.flux(adjoint, state, include_data=include_data)
        w = self.problem.alpha * state.trace.coefficients - theta.coefficients
        r = self.trace_gram(w)
        b = self.forms.p0_matrix
        s = cyclic_bidiagonal_solve(b.diag, b.offdiag, r, transpose=True)
        g = BoundaryControl(self.mesh, s / self.forms.control_metric)
        return g, state, adjoint, theta

    def hessian_apply(self, v):
        """Action of the reduced Hessian (data-free gradient) on a control."""
        g, _, _, _ = self.gradient(v, include_data=False)
        return g

    def control_inner(self, a, b):
        return float(np.sum(self.forms.control_metric * a * b))

    def control_norm(self, a):
        return float(np.sqrt(self.control_inner(a, a)))

    def fixed_point_residual(self, u, g):
        """Natural residual ||u - clamp(u - g)|| in the boundary L2 norm."""
        clipped = np.clip(u.coefficients - g.coefficients,
                          self.problem.bounds.u_a, self.problem.bounds.u_b)
        return self.control_norm(u.coefficients - clipped)

    def lipschitz_estimate(self, iterations=15, seed=7):
        """Largest reduced-Hessian eigenvalue in the control metric."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.mesh.n_boundary_edges)
        v /= self.control_norm(v)
        lam = 1.0
        for _ in range(iterations):
            hv = self.hessian_apply(BoundaryControl(self.mesh, v)).coefficients
            lam = self.control_inner(hv, v)
            norm = self.control_norm(hv)
            if norm == 0.0:
                break
            v = hv / norm
        return max(lam, 1e-30)


# ----------------------------------------------------------------------
# public entry points
# ----------------------------------------------------------------------

def solve_state(problem, u):
    """Discrete state for the given control (odd boundary required)."""
    return problem.workspace().solve_state(u)


def solve_adjoint(problem, state):
    """Interior-edge CR adjoint of the tracking misfit of the given state."""
    return problem.workspace().solve_adjoint(state)


def discrete_flux(adjoint, state, problem):
    """
    Variational normal derivative of the adjoint: the boundary trace whose
    mass-matrix moments equal the broken form of the adjoint against each
    zero-extended boundary hat minus the tracking misfit against the same
    hat.
    """
    return problem.workspace().flux(adjoint, state)


def reduced_gradient(problem, u):
    """Gradient of J at u in the piecewise-constant boundary metric."""
    return problem.workspace().gradient(u)[0]


def objective_value(problem, u):
    """Value of the discrete objective at the given control."""
    return problem.workspace().objective(u)


def kkt_residual(problem, u):
    """Natural residual ||u - clamp(u - grad J(u))|| in the boundary norm."""
    ws = problem.workspace()
    g, _, _, _ = ws.gradient(u)
    return ws.fixed_point_residual(u, g)


def solve_control(problem, step=None, tol=None, max_iter=5000,
                  accelerate=True, u0=None):
    """
    Projected gradient iteration for the box-constrained problem.

    Each step is ``u <- clamp(u - tau * g)`` with Armijo backtracking on the
    objective; with ``accelerate`` a Nesterov extrapolation point is tried
    first and discarded whenever it fails to decrease the objective, so the
    accepted iterates are feasible and monotone either way.  Iteration stops
    when the fixed-point residual drops below the tolerance.

    Parameters
    ----------
    step : float, optional
        Fixed base step; default is the inverse of a power-iteration
        estimate of the largest reduced-Hessian eigenvalue.
    tol : float, optional
        Residual tolerance; default ``1e-9 * (1 + ||u0||)``.
    max_iter : int
    accelerate : bool
    u0 : BoundaryControl, optional
        Feasible-after-clamping start; default zero.

    Raises
    ------
    OptimizationError
        When max_iter is exhausted; the exception carries the last iterate.
    """
    ws = problem.workspace()
    mesh = problem.mesh
    bounds = problem.bounds

    def take(arr):
        return BoundaryControl(mesh, arr)

    x = clamp_box(u0 if u0 is not None else BoundaryControl.zeros(mesh),
                  bounds)
    if tol is None:
        tol = 1e-9 * (1.0 + ws.control_norm(x.coefficients))
    tau = step if step is not None else 1.0 / (1.15 * ws.lipschitz_estimate())

    g_x, state_x, adj_x, theta_x = ws.gradient(x)
    j_x = ws.objective_from_state(state_x)
    history = []
    converged = False
    iterations = 0

    if not accelerate:
        # the plain scheme: backtracked projected gradient from the current
        # iterate; the objective is non-increasing by the Armijo condition
        for k in range(max_iter):
            residual = ws.fixed_point_residual(x, g_x)
            history.append((j_x, tau, residual))
            iterations = k
            if residual <= tol:
                converged = True
                break
            tau_loc = tau
            for _ in range(60):
                z = clamp_box(take(x.coefficients - tau_loc * g_x.coefficients),
                              bounds)
                state_z = ws.solve_state(z)
                j_z = ws.objective_from_state(state_z)
                decrease = ws.control_inner(
                    g_x.coefficients, z.coefficients - x.coefficients)
                if j_z <= j_x + 1e-4 * decrease + 1e-15 * (1.0 + abs(j_x)):
                    break
                tau_loc *= 0.5
            x, j_x = z, j_z
            g_x, state_x, adj_x, theta_x = ws.gradient(x, state=state_z)
    else:
        # Nesterov extrapolation with gradient-based adaptive restart; for
        # this quadratic objective the secant quotient of the gradient map
        # never overestimates the true Lipschitz constant, so the running
        # estimate only ever tightens the step
        y_arr = x.coefficients.copy()
        g_y = g_x
        t_mom = 1.0
        confirm_scale = 1.0
        fresh_restart = True
        prev_y = None
        prev_gy = None
        for k in range(max_iter):
            iterations = k
            residual = ws.fixed_point_residual(take(y_arr), g_y)
            if residual <= tol * confirm_scale:
                g_c, state_c, adj_c, theta_c = ws.gradient(x)
                r_true = ws.fixed_point_residual(x, g_c)
                history.append((j_x, tau, r_true))
                if r_true <= tol:
                    g_x, state_x, adj_x, theta_x = g_c, state_c, adj_c, theta_c
                    converged = True
                    break
                confirm_scale *= 0.5
                y_arr = x.coefficients.copy()
                g_y = g_c
                t_mom = 1.0
                fresh_restart = True
                prev_y = prev_gy = None
                continue

            z = clamp_box(take(y_arr - tau * g_y.coefficients), bounds)
            state_z = ws.solve_state(z)
            j_z = ws.objective_from_state(state_z)
            if fresh_restart and j_z > j_x + 1e-12 * (1.0 + abs(j_x)):
                # a pure gradient step with tau <= 1/L cannot increase J
                tau *= 0.5
                if tau < 1e-18:
                    break
                continue
            fresh_restart = False

            if prev_y is not None:
                dy = ws.control_norm(y_arr - prev_y)
                if dy > 1e-14 * (1.0 + ws.control_norm(y_arr)):
                    l_emp = ws.control_norm(g_y.coefficients - prev_gy) / dy
                    if tau * l_emp > 1.0:
                        tau = 1.0 / (1.05 * l_emp)
            prev_y = y_arr.copy()
            prev_gy = g_y.coefficients.copy()

            x_old_arr = x.coefficients
            x, j_x = z, j_z
            history.append((j_x, tau, residual))
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2))
            if ws.control_inner(g_y.coefficients,
                                x.coefficients - x_old_arr) > 0.0:
                t_next = 1.0
                y_arr = x.coefficients.copy()
                fresh_restart = True
                prev_y = prev_gy = None
            else:
                y_arr = (x.coefficients + ((t_mom - 1.0) / t_next)
                         * (x.coefficients - x_old_arr))
            t_mom = t_next
            g_y = ws.gradient(take(y_arr))[0]

        if not converged:
            g_x, state_x, adj_x, theta_x = ws.gradient(x)

    final_residual = ws.fixed_point_residual(x, g_x)
    solution = OptimalitySolution(
        control=x, state=state_x, adjoint=adj_x, flux=theta_x,
        objective=j_x, kkt_residual=final_residual,
        history=history, iterations=iterations, converged=converged)
    if not converged:
        raise OptimizationError(
            "projected gradient stopped after %d iterations with residual "
            "%.3e (tol %.3e)" % (iterations + 1, final_residual, tol),
            solution=solution)
    return solution


# ----------------------------------------------------------------------
# dense cross-check
# ----------------------------------------------------------------------

QP_ORACLE_MAX_BOUNDARY = 24


def qp_oracle(problem, tol=1e-12, max_iter=2_000_000):
    """
    Independent solver for small instances: builds the dense reduced
    Hessian from one state solve per control basis vector (dense matrices
    only) and runs a long projected-gradient loop to a 1e-12 fixed-point
    residual.

    Raises
    ------
    QpOracleSizeError
        For meshes with more than 24 boundary edges.
    """
    mesh = problem.mesh
    n = mesh.n_boundary_edges
    if n > QP_ORACLE_MAX_BOUNDARY:
        raise QpOracleSizeError(
            "dense oracle refuses %d boundary edges (max %d)"
            % (n, QP_ORACLE_MAX_BOUNDARY))
    h_mat, c_vec, _ = reduced_qp_matrices(problem)
    d = mesh.boundary_edge_lengths()
    bounds = problem.bounds

    h_metric = h_mat / d[:, None]
    lam = _dense_power_metric(h_metric, d)
    tau = 1.0 / (1.05 * lam)
    u = np.clip(np.zeros(n), bounds.u_a, bounds.u_b)
    for _ in range(max_iter):
        g = h_metric @ u + c_vec / d
        u_new = np.clip(u - tau * g, bounds.u_a, bounds.u_b)
        res = np.sqrt(np.sum(d * (u - np.clip(u - g, bounds.u_a,
                                              bounds.u_b)) ** 2))
        if res <= tol * (1.0 + np.sqrt(np.sum(d * u * u))):
            return BoundaryControl(mesh, u_new)
        u = u_new
    raise OptimizationError("dense oracle projected gradient did not reach "
                            "tolerance %.1e" % tol)


def reduced_qp_matrices(problem, dense=True):
    """
    Dense reduced problem J(u) = 1/2 u^T H u + c^T u + e0, assembled from
    one state solve per unit control.  With ``dense`` the interior solves
    use dense pivoted elimination (the oracle path); otherwise the cached
    sparse factorization builds the same matrices for larger boundaries.
    """
    mesh = problem.mesh
    ws = problem.workspace()
    n = mesh.n_boundary_edges
    forms = ws.forms
    interior = forms.interior_edges
    b_dense = forms.p0_matrix.to_dense()
    z_cols = np.linalg.solve(b_dense, np.eye(n))        # traces per basis control

    if dense:
        a_dense = forms.stiffness.to_dense()
        a00 = a_dense[np.ix_(interior, interior)]

        def solve00(rhs):
            return np.linalg.solve(a00, rhs)
    else:
        def solve00(rhs):
            return ws.solve_interior(rhs)

    e_map = forms.vertex_to_cr
    bverts = mesh.boundary_cycle_vertices
    composites = np.zeros((mesh.n_edges, n))
    for j in range(n):
        zt = np.zeros(mesh.n_vertices)
        zt[bverts] = z_cols[:, j]
        c_z = e_map @ zt
        rhs = -(forms.stiffness @ c_z)[interior]
        comp = c_z
        comp[interior] += solve00(rhs)
        composites[:, j] = comp

    y_f = np.zeros(mesh.n_edges)
    if np.any(ws.load_f):
        y_f[interior] = solve00(ws.load_f[interior])

    m_diag = forms.mass_diag
    # blocked Gram keeps the scaled-copy transient small on fine meshes
    gram = np.empty((n, n))
    block = max(1, int(2.0e8 / (8 * mesh.n_edges)))
    for j0 in range(0, n, block):
        sl = slice(j0, min(j0 + block, n))
        gram[:, sl] = composites.T @ (m_diag[:, None] * composites[:, sl])
    m_gamma = forms.boundary_mass
    reg = z_cols.T @ m_gamma @ z_cols
    h_mat = gram + problem.alpha * reg
    h_mat = 0.5 * (h_mat + h_mat.T)
    c_vec = composites.T @ (m_diag * y_f - ws.load_yd)
    const = 0.5 * (y_f @ (m_diag * y_f) - 2.0 * (y_f @ ws.load_yd)
                   + ws.yd_square)
    return h_mat, c_vec, const


def solve_reduced_qp(problem, tol=1e-12, max_iter=20000):
    """
    Minimizer of the explicitly assembled reduced problem: a short
    accelerated projected-gradient phase identifies the active set, then an
    exact solve on the free components (re-classifying until the
    sign conditions hold) polishes the iterate to machine-precision
    residuals.  Same minimizer as ``solve_control``, reached through dense
    O(N^2) iterations; used for high-accuracy references on fine meshes.
    """
    mesh = problem.mesh
    h_mat, c_vec, _ = reduced_qp_matrices(problem, dense=False)
    d = mesh.boundary_edge_lengths()
    bounds = problem.bounds
    u_a, u_b = bounds.u_a, bounds.u_b
    h_metric = h_mat / d[:, None]
    c_metric = c_vec / d
    lam = _dense_power_metric(h_metric, d)
    tau = 1.0 / (1.05 * lam)
    n = d.size

    def metric_gradient(u):
        return h_metric @ u + c_metric

    def residual_at(u, g):
        return np.sqrt(np.sum(d * (u - np.clip(u - g, u_a, u_b)) ** 2))

    # phase 1: accelerated projected gradient to locate the active set
    x = np.clip(np.zeros(n), u_a, u_b)
    y = x.copy()
    t_mom = 1.0
    warm_tol = max(tol, 1e-6)
    for _ in range(max_iter):
        g_y = metric_gradient(y)
        if residual_at(y, g_y) <= warm_tol:
            x = np.clip(y, u_a, u_b)
            break
        z = np.clip(y - tau * g_y, u_a, u_b)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2))
        if g_y @ (d * (z - x)) > 0.0:
            t_next = 1.0
            y = z.copy()
        else:
            y = z + ((t_mom - 1.0) / t_next) * (z - x)
        x = z
        t_mom = t_next

    # phase 2: active-set polishing (strict convexity ends the cycling)
    snap = 1e-8 * (u_b - u_a)
    for _ in range(100):
        g = metric_gradient(x)
        if residual_at(x, g) <= tol:
            return BoundaryControl(mesh, x)
        at_low = x <= u_a + snap
        at_up = x >= u_b - snap
        active = (at_low & (g > 0.0)) | (at_up & (g < 0.0))
        free = ~active
        u_new = np.where(at_low, u_a, np.where(at_up, u_b, x))
        if np.any(free):
            rhs = -(c_vec[free] + h_mat[np.ix_(free, active)]
                    @ u_new[active])
            u_new[free] = np.linalg.solve(h_mat[np.ix_(free, free)], rhs)
        x = np.clip(u_new, u_a, u_b)
    return BoundaryControl(mesh, x)


def _dense_power_metric(h_metric, d, iterations=200, tol=1e-12, seed=3):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d.size)
    v /= np.sqrt(np.sum(d * v * v))
    lam = 1.0
    for _ in range(iterations):
        hv = h_metric @ v
        lam_new = float(np.sum(d * hv * v))
        norm = np.sqrt(np.sum(d * hv * hv))
        if norm == 0.0:
            break
        v = hv / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            lam = lam_new
            break
        lam = lam_new
    return max(lam, 1e-30)
