"""
Manufactured problems, error measurement and convergence studies.

The closed-form test problem lives on the unit square.  Choosing the
adjoint ``theta = sin(pi x1) sin(pi x2)`` (zero on the boundary) makes its
outward normal derivative ``-pi sin(pi t)`` along every side, with t the
coordinate along that side.  Scaling by 1/alpha gives the optimal control,
its harmonic-plus-source state is ``-(pi/alpha)(sin pi x1 + sin pi x2)``,
and the data pair (f, y_d) is chosen so the full first-order optimality
system holds exactly:

    f   = -Laplace(state)            = pi^2 * state
    y_d = state + Laplace(theta)     = state - 2 pi^2 theta

With bounds that never clip the control this yields exact errors for the
control, state and flux; tightening the lower bound activates the
constraint on a positive-measure part of the boundary, in which case a
fine-mesh reference solve stands in for the unknown optimum.

Cross-mesh comparisons of boundary quantities use the arclength
parameterization (all meshes of one polygon share it, since the cycle
starts at the lexicographically smallest corner), and piecewise-constant
mismatches are integrated exactly on the merged partition.
"""

import time

import numpy as np

from .control_ops import BoxBounds, p0_project, p1_tilde, \
    p1_tilde_operator_norm
from .fespace import BoundaryControl, CrFunction, PiecewiseLinear, a_pw, \
    enrich, quadrature_edge, quadrature_triangle, triangle_points
from .mesh import (ensure_odd_boundary, refine_uniform,
                   regular_polygon_corners, triangulate_polygon_fan,
                   triangulate_unit_square)
from .optimizer import (ExactSolution, OptimalitySolution, ProblemSpec,
                        solve_control, solve_reduced_qp)


class StudyError(Exception):
    """A study level failed; carries the rows completed so far."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


# ----------------------------------------------------------------------
# mesh families
# ----------------------------------------------------------------------

class MeshFamily:
    """
    Level-indexed meshes of one domain with odd boundary counts.

    Square levels are regenerated structured grids with n0 * 2^level cells
    per side; polygon levels are uniform refinements of the centroid fan.
    Every level is passed through the odd-boundary adjustment.
    """

    def __init__(self, domain="square", n0=4, corners=None):
        self.domain = domain
        self.n0 = int(n0)
        if domain == "square":
            self.corners = None
        elif domain == "pentagon":
            self.corners = regular_polygon_corners(5)
        elif domain == "polygon":
            if corners is None:
                raise ValueError("polygon family needs corner coordinates")
            self.corners = np.asarray(corners, dtype=float)
        else:
            raise ValueError("unknown domain %r" % (domain,))
        self._chain = []

    def base_mesh(self, level):
        """The level mesh before the odd-boundary adjustment."""
        if self.domain == "square":
            return triangulate_unit_square(self.n0 * 2 ** level)
        if not self._chain:
            self._chain.append(triangulate_polygon_fan(self.corners))
        while len(self._chain) <= level:
            self._chain.append(refine_uniform(self._chain[-1]))
        return self._chain[level]

    def mesh(self, level):
        return ensure_odd_boundary(self.base_mesh(level))


# ----------------------------------------------------------------------
# manufactured problems on the unit square
# ----------------------------------------------------------------------

def _square_side_parameter(s):
    # all four sides have length one, so the side coordinate is s mod 1
    return np.mod(np.asarray(s, dtype=float), 1.0)


def manufactured_inactive(alpha, mesh=None):
    """
    Closed-form problem on the unit square whose box constraint never
    activates: bounds [-pi/alpha - 1, 1] strictly contain the control range
    [-pi/alpha, 0].
    """
    alpha = float(alpha)
    pi = np.pi

    def state(p):
        p = np.asarray(p, dtype=float)
        return -(pi / alpha) * (np.sin(pi * p[..., 0]) + np.sin(pi * p[..., 1]))

    def state_gradient(p):
        p = np.asarray(p, dtype=float)
        return -(pi ** 2 / alpha) * np.stack(
            [np.cos(pi * p[..., 0]), np.cos(pi * p[..., 1])], axis=-1)

    def adjoint(p):
        p = np.asarray(p, dtype=float)
        return np.sin(pi * p[..., 0]) * np.sin(pi * p[..., 1])

    def f(p):
        return pi ** 2 * state(p)

    def y_d(p):
        return state(p) - 2.0 * pi ** 2 * adjoint(p)

    def control(s):
        return -(pi / alpha) * np.sin(pi * _square_side_parameter(s))

    def flux(s):
        return -pi * np.sin(pi * _square_side_parameter(s))

    exact = ExactSolution(control=control, flux=flux, state=state,
                          state_gradient=state_gradient, adjoint=adjoint)
    bounds = BoxBounds(-pi / alpha - 1.0, 1.0)
    return ProblemSpec(mesh, alpha, bounds, f=f, y_d=y_d, exact=exact,
                       name="inactive")


def manufactured_active(alpha, clip_fraction=0.5, mesh=None):
    """
    Same data as the inactive problem but with the lower bound raised to
    -(pi/alpha) * (1 - clip_fraction), which clips the control on a
    positive-measure part of every side.  No closed form survives the
    clipping, so studies compare against a fine-mesh reference.
    """
    if not 0.0 < clip_fraction < 1.0:
        raise ValueError("clip_fraction must lie in (0, 1)")
    base = manufactured_inactive(alpha, mesh=mesh)
    bounds = BoxBounds(-(np.pi / alpha) * (1.0 - clip_fraction), 1.0)
    return ProblemSpec(mesh, alpha, bounds, f=base.f, y_d=base.y_d,
                       exact=None, name="active")


# ----------------------------------------------------------------------
# error measurement
# ----------------------------------------------------------------------

def _edge_arclength_nodes(mesh, subdivide, order):
    """Arclength nodes/weights per boundary edge, shape (N, m)."""
    t, w = quadrature_edge(order)
    # composite rule on `subdivide` equal subintervals of each edge
    offs = (np.arange(subdivide)[:, None] + t[None, :]) / subdivide
    ww = np.tile(w / subdivide, subdivide)
    tt = offs.reshape(-1)
    breaks = mesh.boundary_arclength_breaks()
    lengths = mesh.boundary_edge_lengths()
    s = breaks[:-1, None] + tt[None, :] * lengths[:, None]
    return s, tt, ww


def control_error_vs_function(u, g_s, subdivide=4, order=6):
    """L2(boundary) distance between a piecewise-constant control and a
    smooth-per-side arclength function."""
    mesh = u.mesh
    s, _, w = _edge_arclength_nodes(mesh, subdivide, order)
    g = np.asarray(g_s(s.reshape(-1)), dtype=float).reshape(s.shape)
    diff2 = (g - u.coefficients[:, None]) ** 2
    lengths = mesh.boundary_edge_lengths()
    return float(np.sqrt(np.sum(lengths * (diff2 @ w))))


def trace_error_vs_function(z, g_s, subdivide=4, order=6):
    """L2(boundary) distance between a boundary trace and an arclength
    function."""
    mesh = z.mesh
    s, tt, w = _edge_arclength_nodes(mesh, subdivide, order)
    g = np.asarray(g_s(s.reshape(-1)), dtype=float).reshape(s.shape)
    zc = z.coefficients
    zn = np.roll(zc, -1)
    vals = zc[:, None] * (1.0 - tt)[None, :] + zn[:, None] * tt[None, :]
    lengths = mesh.boundary_edge_lengths()
    return float(np.sqrt(np.sum(lengths * (((g - vals) ** 2) @ w))))


def control_error_vs_control(u_a, u_b):
    """
    Exact L2(boundary) distance between piecewise-constant controls on two
    partitions of the same polygon boundary.
    """
    br_a, va = u_a.arclength_segments()
    br_b, vb = u_b.arclength_segments()
    if abs(br_a[-1] - br_b[-1]) > 1e-9 * max(br_a[-1], 1.0):
        raise ValueError("controls live on boundaries of different length")
    total = min(br_a[-1], br_b[-1])
    merged = np.union1d(br_a, br_b)
    merged[-1] = total
    mid = 0.5 * (merged[:-1] + merged[1:])
    ia = np.clip(np.searchsorted(br_a, mid, side="right") - 1, 0, len(va) - 1)
    ib = np.clip(np.searchsorted(br_b, mid, side="right") - 1, 0, len(vb) - 1)
    seg = merged[1:] - merged[:-1]
    return float(np.sqrt(np.sum(seg * (va[ia] - vb[ib]) ** 2)))


def control_on_mesh(u, fine_mesh):
    """
    Re-express a piecewise-constant control on a finer partition of the
    same boundary (each fine edge must lie inside one coarse edge).
    """
    breaks, vals = u.arclength_segments()
    fine_breaks = fine_mesh.boundary_arclength_breaks()
    mid = 0.5 * (fine_breaks[:-1] + fine_breaks[1:])
    idx = np.clip(np.searchsorted(breaks, mid, side="right") - 1,
                  0, len(vals) - 1)
    return BoundaryControl(fine_mesh, vals[idx])


def state_error_l2(y, exact, order=6):
    """L2(domain) distance between a discrete function and a closed form."""
    mesh = y.mesh
    bary, w = quadrature_triangle(order)
    pts = triangle_points(mesh, bary)
    ex = np.asarray(exact(pts.reshape(-1, 2)), dtype=float)
    ex = ex.reshape(mesh.n_triangles, len(w))
    diff2 = (y.tri_values_at(bary) - ex) ** 2
    return float(np.sqrt(np.sum(mesh.areas * (diff2 @ w))))


def state_error_energy(y, exact_gradient, order=6):
    """Broken H1-seminorm distance to a closed-form gradient."""
    mesh = y.mesh
    bary, w = quadrature_triangle(order)
    pts = triangle_points(mesh, bary)
    ex = np.asarray(exact_gradient(pts.reshape(-1, 2)), dtype=float)
    ex = ex.reshape(mesh.n_triangles, len(w), 2)
    diff = y.tri_gradients_at(bary) - ex
    per_tri = np.einsum("q,tqx,tqx->t", w, diff, diff)
    return float(np.sqrt(np.sum(mesh.areas * per_tri)))


def state_error_vs_reference(y_coarse, y_fine, order=4):
    """
    L2(domain) distance between CR functions on two meshes of one
    refine/adjust chain, integrated on the finer mesh.  The coarse function
    is evaluated through the ancestor map, so no geometric search is
    needed.
    """
    fine = y_fine.mesh
    coarse = y_coarse.mesh
    amap = fine.ancestor_triangles(coarse)
    bary, w = quadrature_triangle(order)
    pts = triangle_points(fine, bary)                      # (nt, nq, 2)
    corners = coarse.vertices[coarse.triangles[amap]]      # (nt, 3, 2)
    # barycentric coordinates of the fine quadrature points in the coarse
    # triangles: solve the affine system per triangle
    v0 = corners[:, 0]
    m = np.stack([corners[:, 1] - v0, corners[:, 2] - v0], axis=-1)
    rhs = pts - v0[:, None, :]
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    lam1 = (rhs[..., 0] * m[:, 1, 1, None] - rhs[..., 1] * m[:, 0, 1, None]) \
        / det[:, None]
    lam2 = (-rhs[..., 0] * m[:, 1, 0, None] + rhs[..., 1] * m[:, 0, 0, None]) \
        / det[:, None]
    lam0 = 1.0 - lam1 - lam2
    local = y_coarse.coefficients[coarse.tri_edges[amap]]  # (nt, 3)
    coarse_vals = (local[:, 0, None] * (1.0 - 2.0 * lam0)
                   + local[:, 1, None] * (1.0 - 2.0 * lam1)
                   + local[:, 2, None] * (1.0 - 2.0 * lam2))
    diff2 = (y_fine.tri_values_at(bary) - coarse_vals) ** 2
    return float(np.sqrt(np.sum(fine.areas * (diff2 @ w))))


def p0_best_approximation_gap(mesh):
    """
    Sanity metric: the L2(boundary) distance between one smooth boundary
    wave and its piecewise-constant projection (first-order in h).
    """
    total = mesh.boundary_arclength_breaks()[-1]

    def g(s):
        return np.sin(2.0 * np.pi * np.asarray(s) / total)

    u = p0_project(mesh, g, param="arclength")
    return control_error_vs_function(u, g)


def orthogonality_max_violation(mesh, n_pairs=20, seed=0):
    """
    Largest normalized broken-form pairing of a random piecewise linear
    against the enrichment defect of a random interior-edge CR function:

        |a_pw(p, v - enrich(v))| / (|p|_h |v|_h)

    Identically zero in exact arithmetic because enrichment preserves all
    edge means and piecewise linears have triangle-wise constant gradients.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    interior = mesh.interior_edges
    for _ in range(n_pairs):
        p = PiecewiseLinear(mesh, rng.standard_normal((mesh.n_triangles, 3)))
        coeffs = np.zeros(mesh.n_edges)
        coeffs[interior] = rng.standard_normal(interior.size)
        v = CrFunction(mesh, coeffs)
        defect = a_pw(p, v) - a_pw(p, enrich(v), order=2)
        denom = p.norm_broken_energy() * v.norm_broken_energy()
        if denom > 0:
            worst = max(worst, abs(defect) / denom)
    return worst


def round_trip_defect(mesh, n_samples=5, seed=0):
    """
    Max coefficient defect of project(lift(u)) = u and lift(project(z)) = z
    over random samples plus the constant function.
    """
    rng = np.random.default_rng(seed)
    n = mesh.n_boundary_edges
    worst = 0.0
    samples = [np.ones(n)] + [rng.standard_normal(n) for _ in range(n_samples)]
    for c in samples:
        u = BoundaryControl(mesh, c)
        z = p1_tilde(mesh, u)
        u_back = p0_project(mesh, z)
        worst = max(worst, np.abs(u_back.coefficients - c).max())
        z0 = z  # reuse as a trace sample for the opposite composition
        u2 = p0_project(mesh, z0)
        z_back = p1_tilde(mesh, u2)
        worst = max(worst, np.abs(z_back.coefficients - z0.coefficients).max())
    return worst


def operator_report(levels, family=None, domain="pentagon", n0=4, n_pairs=20,
                    seed=0):
    """
    Per-level operator health: enrichment orthogonality, lift round trip
    and the measured lift operator norm.
    """
    if family is None:
        family = MeshFamily(domain, n0=n0)
    rows = []
    for level in range(levels):
        mesh = family.mesh(level)
        rows.append({
            "level": level,
            "h": mesh.h,
            "n_boundary": mesh.n_boundary_edges,
            "orthogonality": orthogonality_max_violation(
                mesh, n_pairs=n_pairs, seed=seed + level),
            "round_trip": round_trip_defect(mesh, seed=seed + level),
            "p1_norm": p1_tilde_operator_norm(mesh),
        })
    return rows


def eoc(errors, hs):
    """
    Experimental orders of convergence between consecutive rows; entry k
    compares rows k and k+1 and equals log2(e_k / e_{k+1}) when h halves.
    """
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])


# ----------------------------------------------------------------------
# convergence table
# ----------------------------------------------------------------------

class ConvergenceTable:
    """
    Rows of per-level results with derived rate columns.

    Rate column ``eoc_<metric>`` on row k compares rows k-1 and k; the
    first row holds NaN.
    """

    def __init__(self, metrics):
        self.metrics = list(metrics)
        self.rows = []

    def add_row(self, **values):
        self.rows.append(dict(values))

    def finalize(self):
        hs = np.array([r["h"] for r in self.rows])
        for m in self.metrics:
            errs = np.array([r.get(m, np.nan) for r in self.rows])
            rates = eoc(errs, hs)
            for k, row in enumerate(self.rows):
                row["eoc_" + m] = np.nan if k == 0 else float(rates[k - 1])
        return self

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows])

    @property
    def column_names(self):
        base = ["level", "h", "n_boundary"]
        base += self.metrics
        base += ["eoc_" + m for m in self.metrics]
        base += ["kkt_residual", "iterations", "wall_time"]
        seen = []
        for name in base:
            if name not in seen and any(name in r for r in self.rows):
                seen.append(name)
        return seen

    def last_eoc(self, metric):
        vals = self.column("eoc_" + metric)
        vals = vals[np.isfinite(vals)]
        return float(vals[-1]) if vals.size else np.nan


# ----------------------------------------------------------------------
# studies
# ----------------------------------------------------------------------

def reference_solution(problem, mesh, tol=1e-11, u0=None, max_iter=200000):
    """
    High-accuracy solve used as a stand-in for the unknown optimum.  The
    caller must keep the reference mesh at least two levels finer than the
    finest study level so the reference error stays negligible.

    For boundaries small enough to assemble the reduced problem the
    minimizer is computed through dense accelerated iterations and then
    verified (and if needed polished) against the full adjoint-based
    residual, which is much faster than iterating state solves directly.
    """
    p = problem.with_mesh(mesh)
    n = mesh.n_boundary_edges
    if n <= 1500 and n * mesh.n_edges * 8 <= 1.2e9:
        u_dense = solve_reduced_qp(p, tol=0.3 * tol)
        ws = p.workspace()
        g, state, adjoint, theta = ws.gradient(u_dense)
        residual = ws.fixed_point_residual(u_dense, g)
        if residual <= tol:
            return OptimalitySolution(
                control=u_dense, state=state, adjoint=adjoint, flux=theta,
                objective=ws.objective_from_state(state),
                kkt_residual=residual, history=[], iterations=0,
                converged=True)
        u0 = u_dense
    return solve_control(p, tol=tol, max_iter=max_iter, u0=u0)


def convergence_study(problem, levels, domain="square", n0=4,
                      metrics=("control_error", "state_error", "flux_error",
                               "p0_gap"),
                      reference_gap=3, tol=None, max_iter=50000,
                      progress=None):
    """
    Solve the control problem on a family of refined meshes and tabulate
    errors with experimental convergence rates.

    Parameters
    ----------
    problem : ProblemSpec
        Template; its mesh field is replaced level by level.
    levels : int
        Number of levels (>= 3 for meaningful rates).
    domain : {"square", "pentagon", "polygon"}
    n0 : int
        Base resolution of the square family.
    metrics : tuple of str
        Error columns to fill; exact-solution metrics fall back to a
        reference solve when the problem has no closed form.
    reference_gap : int
        Levels between the finest study mesh and the reference mesh (>= 2).
    progress : callable, optional
        Called with a status string per level.

    Raises
    ------
    StudyError
        If any level fails; the exception carries the partial table.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    if reference_gap < 2:
        raise ValueError("reference mesh must be at least 2 levels finer")
    family = MeshFamily(domain, n0=n0)
    table = ConvergenceTable(metrics)
    exact = problem.exact

    reference = None
    if exact is None or exact.control is None:
        ref_mesh = family.mesh(levels - 1 + reference_gap)
        if progress:
            progress("reference solve on %s" % ref_mesh)
        reference = reference_solution(problem, ref_mesh)

    for level in range(levels):
        mesh = family.mesh(level)
        p = problem.with_mesh(mesh)
        if progress:
            progress("level %d: %s" % (level, mesh))
        t0 = time.perf_counter()
        try:
            sol = solve_control(p, tol=tol, max_iter=max_iter)
        except Exception as err:
            raise StudyError("level %d failed: %s" % (level, err),
                             table=table.finalize()) from err
        wall = time.perf_counter() - t0
        row = {"level": level, "h": mesh.h, "n_boundary": mesh.n_boundary_edges,
               "kkt_residual": sol.kkt_residual, "iterations": sol.iterations,
               "wall_time": wall}
        if "control_error" in metrics:
            if exact is not None and exact.control is not None:
                row["control_error"] = control_error_vs_function(
                    sol.control, exact.control)
            else:
                row["control_error"] = control_error_vs_control(
                    sol.control, reference.control)
        if "state_error" in metrics and exact is not None \
                and exact.state is not None:
            row["state_error"] = state_error_l2(sol.state.composite,
                                                exact.state)
        if "flux_error" in metrics and exact is not None \
                and exact.flux is not None:
            row["flux_error"] = trace_error_vs_function(sol.flux, exact.flux)
        if "p0_gap" in metrics:
            row["p0_gap"] = p0_best_approximation_gap(mesh)
        table.add_row(**row)
    return table.finalize()
