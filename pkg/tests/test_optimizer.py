import numpy as np
import pytest

from crbc import (BoundaryControl, BoxBounds, OptimizationError, ProblemSpec,
                  QpOracleSizeError, discrete_flux, ensure_odd_boundary,
                  interpolate_cr, kkt_residual, objective_value, qp_oracle,
                  reduced_gradient, refine_uniform, solve_adjoint,
                  solve_control, solve_state, triangulate_unit_square)
from crbc.harness import (control_error_vs_control, eoc,
                          manufactured_inactive, state_error_l2,
                          trace_error_vs_function)
from crbc.optimizer import reduced_qp_matrices


def sin2(p):
    return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])


def make_problem(mesh, alpha=1.0, bounds=(-10.0, 10.0), f=None, y_d=None):
    return ProblemSpec(mesh, alpha, BoxBounds(*bounds), f=f, y_d=y_d)


class TestSolveState:
    @pytest.mark.parametrize("c", [0.0, 1.0, -3.25])
    def test_constant_reproduction(self, square4_odd, c):
        p = make_problem(square4_odd)
        u = BoundaryControl.constant(square4_odd, c)
        st = solve_state(p, u)
        assert np.abs(st.composite.coefficients - c).max() < 1e-10

    def test_boundary_means_match_control_exactly(self, square4_odd):
        rng = np.random.default_rng(1)
        p = make_problem(square4_odd)
        u = BoundaryControl(square4_odd,
                            rng.standard_normal(square4_odd.n_boundary_edges))
        st = solve_state(p, u)
        assert st.boundary_mean_defect() < 1e-13

    def test_homogeneous_dirichlet_rates(self):
        def f(p):
            return 2.0 * np.pi ** 2 * sin2(p)

        def grad(p):
            return np.pi * np.stack(
                [np.cos(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1]),
                 np.sin(np.pi * p[..., 0]) * np.cos(np.pi * p[..., 1])],
                axis=-1)

        from crbc.harness import state_error_energy
        errs_l2, errs_en, hs = [], [], []
        for n in (4, 8, 16):
            mesh = ensure_odd_boundary(triangulate_unit_square(n))
            p = make_problem(mesh, f=f)
            st = solve_state(p, BoundaryControl.zeros(mesh))
            errs_l2.append(state_error_l2(st.composite, sin2))
            errs_en.append(state_error_energy(st.composite, grad))
            hs.append(mesh.h)
        assert np.all(eoc(errs_l2, hs) >= 1.9)
        assert np.all(eoc(errs_en, hs) >= 0.95)

    def test_piecewise_constant_data_error_decreases(self):
        from crbc.control_ops import p0_project
        from crbc.harness import control_on_mesh, state_error_vs_reference

        def g(p):
            return p[:, 0] ** 3 - 0.5 * p[:, 1]

        errs = []
        for n in (4, 8):
            mesh = ensure_odd_boundary(triangulate_unit_square(n))
            u = p0_project(mesh, g)
            st = solve_state(make_problem(mesh), u)
            fine = ensure_odd_boundary(refine_uniform(refine_uniform(mesh)))
            u_fine = control_on_mesh(u, fine)
            st_fine = solve_state(make_problem(fine), u_fine)
            errs.append(state_error_vs_reference(st.composite,
                                                 st_fine.composite))
        assert errs[1] < 0.6 * errs[0]


class TestConjugateGradientBackend:
    def test_cg_workspace_matches_direct(self, square4_odd):
        from crbc import DiscreteProblem
        p = make_problem(square4_odd)
        rng = np.random.default_rng(2)
        u = BoundaryControl(square4_odd,
                            rng.standard_normal(square4_odd.n_boundary_edges))
        direct = p.workspace().solve_state(u)
        via_cg = DiscreteProblem(p, solver="cg").solve_state(u)
        assert np.abs(direct.composite.coefficients
                      - via_cg.composite.coefficients).max() < 1e-9

    def test_cg_nonconvergence_propagates(self, square4_odd):
        from crbc import CgNonConvergence, DiscreteProblem
        import crbc.linalg as linalg
        p = make_problem(square4_odd)
        ws = DiscreteProblem(p, solver="cg")
        rng = np.random.default_rng(3)
        u = BoundaryControl(square4_odd,
                            rng.standard_normal(square4_odd.n_boundary_edges))
        original = linalg.cg_solve

        def strangled(a, b, tol=1e-13, max_iter=None, x0=None):
            return original(a, b, tol=tol, max_iter=2, x0=x0)

        from unittest import mock
        with mock.patch.object(type(ws), "solve_interior",
                               lambda self, rhs: strangled(
                                   self.forms.stiffness_interior, rhs).x):
            with pytest.raises(CgNonConvergence):
                ws.solve_state(u)


class TestSolveAdjoint:
    def test_zero_misfit_gives_zero_adjoint(self, square4_odd):
        # choose the desired state equal to the computed state field
        p0 = make_problem(square4_odd)
        u = BoundaryControl.constant(square4_odd, 2.0)
        st = solve_state(p0, u)

        def y_d(pts):
            return np.full(pts.shape[:-1], 2.0)

        p = make_problem(square4_odd, y_d=y_d)
        xi = solve_adjoint(p, solve_state(p, u))
        assert np.abs(xi.coefficients).max() < 1e-11

    def test_manufactured_adjoint_rate_two(self):
        def y_d(p):
            return -2.0 * np.pi ** 2 * sin2(p)

        errs, hs = [], []
        for n in (4, 8, 16):
            mesh = ensure_odd_boundary(triangulate_unit_square(n))
            p = make_problem(mesh, y_d=y_d)
            st = solve_state(p, BoundaryControl.zeros(mesh))
            xi = solve_adjoint(p, st)
            errs.append(state_error_l2(xi, sin2))
            hs.append(mesh.h)
        assert np.all(eoc(errs, hs) >= 1.9)

    def test_self_adjointness(self, square4_odd):
        ws = make_problem(square4_odd).workspace()
        rng = np.random.default_rng(7)
        interior = square4_odd.interior_edges
        r1 = rng.standard_normal(interior.size)
        r2 = rng.standard_normal(interior.size)
        x1 = ws.solve_interior(r1)
        x2 = ws.solve_interior(r2)
        assert x1 @ r2 == pytest.approx(x2 @ r1, rel=1e-11)


class TestDiscreteFlux:
    def test_zero_case(self, square4_odd):
        p = make_problem(square4_odd)
        u = BoundaryControl.zeros(square4_odd)
        st = solve_state(p, u)
        xi = solve_adjoint(p, st)
        theta = discrete_flux(xi, st, p)
        assert np.abs(theta.coefficients).max() < 1e-12

    def test_flux_error_decreases_under_refinement(self):
        errs: list = []
        for n in (4, 8, 16):
            mesh = ensure_odd_boundary(triangulate_unit_square(n))
            prob = manufactured_inactive(1.0).with_mesh(mesh)
            sol = solve_control(prob, tol=1e-10)
            errs.append(trace_error_vs_function(sol.flux, prob.exact.flux))
        assert errs[1] < errs[0] and errs[2] < 0.8 * errs[1]

    def test_exact_adjoint_interpolant_consistency(self):
        # swapping the discrete adjoint for the interpolated closed form
        # moves the recovered flux by an amount that shrinks with h
        shifts = []
        for n in (4, 8, 16):
            mesh = ensure_odd_boundary(triangulate_unit_square(n))
            prob = manufactured_inactive(1.0).with_mesh(mesh)
            ws = prob.workspace()
            u = ws.forms  # workspace assembled
            sol = solve_control(prob, tol=1e-10)
            theta_h = sol.flux
            xi_star = interpolate_cr(prob.exact.adjoint, mesh)
            theta_star = ws.flux(xi_star, sol.state)
            z = theta_h.coefficients - theta_star.coefficients
            from crbc.fespace import BoundaryTrace
            shifts.append(BoundaryTrace(mesh, z).norm_l2())
        assert shifts[1] < 0.85 * shifts[0]
        assert shifts[2] < 0.85 * shifts[1]


class TestReducedGradient:
    def test_matches_central_differences(self, square4_odd):
        prob = manufactured_inactive(0.7).with_mesh(square4_odd)
        ws = prob.workspace()
        rng = np.random.default_rng(42)
        u = BoundaryControl(square4_odd,
                            rng.uniform(-1, 1, square4_odd.n_boundary_edges))
        g = reduced_gradient(prob, u)
        h = 1e-5
        for _ in range(5):
            du = rng.standard_normal(square4_odd.n_boundary_edges)
            up = BoundaryControl(square4_odd, u.coefficients + h * du)
            um = BoundaryControl(square4_odd, u.coefficients - h * du)
            fd = (objective_value(prob, up) - objective_value(prob, um)) \
                / (2 * h)
            inner = ws.control_inner(g.coefficients, du)
            assert abs(fd - inner) <= 1e-6 * max(abs(fd), 1e-12)

    def test_zero_at_unconstrained_minimizer(self, square4_odd):
        prob = manufactured_inactive(1.0).with_mesh(square4_odd)
        sol = solve_control(prob, tol=1e-11)
        g = reduced_gradient(prob, sol.control)
        ws = prob.workspace()
        # the box is inactive, so the fixed-point residual equals the
        # gradient norm up to clipping
        assert ws.control_norm(g.coefficients) < 1e-9

    def test_large_alpha_aligns_with_control(self, square4_odd):
        alpha = 1e6
        prob = make_problem(square4_odd, alpha=alpha)
        u = BoundaryControl.constant(square4_odd, 0.8)
        g = reduced_gradient(prob, u)
        assert np.abs(g.coefficients - alpha * u.coefficients).max() \
            <= 1e-4 * alpha * 0.8


class TestSolveControl:
    def test_trivial_zero_problem(self, square4_odd):
        p = make_problem(square4_odd, bounds=(-1.0, 1.0))
        sol = solve_control(p)
        assert sol.objective == pytest.approx(0.0, abs=1e-15)
        assert np.abs(sol.control.coefficients).max() == 0.0
        assert sol.converged

    def test_shrinking_bounds_force_constant(self, square4_odd):
        prob = manufactured_inactive(1.0).with_mesh(square4_odd)
        eps = 1e-6
        forced = ProblemSpec(square4_odd, 1.0, BoxBounds(2.0, 2.0 + eps),
                             f=prob.f, y_d=prob.y_d)
        sol = solve_control(forced)
        assert np.all(sol.control.coefficients >= 2.0)
        assert np.all(sol.control.coefficients <= 2.0 + eps)

    def test_feasible_and_monotone_with_plain_armijo(self, pentagon):
        rng = np.random.default_rng(5)

        def f(p):
            return np.cos(p[..., 0]) + p[..., 1]

        def y_d(p):
            return p[..., 0] - 0.2 * p[..., 1]

        p = make_problem(pentagon, alpha=0.5, bounds=(-0.4, 0.3), f=f, y_d=y_d)
        u0 = BoundaryControl(pentagon, rng.uniform(-2, 2, 5))
        sol = solve_control(p, accelerate=False, tol=1e-8, u0=u0)
        objectives = [h[0] for h in sol.history]
        assert all(b <= a + 1e-13 * (1 + abs(a))
                   for a, b in zip(objectives, objectives[1:]))
        assert np.all(sol.control.coefficients >= -0.4 - 1e-15)
        assert np.all(sol.control.coefficients <= 0.3 + 1e-15)

    def test_max_iter_failure_carries_iterate(self, square4_odd):
        prob = manufactured_inactive(1.0).with_mesh(square4_odd)
        with pytest.raises(OptimizationError) as info:
            solve_control(prob, max_iter=3)
        assert info.value.solution is not None
        assert info.value.solution.kkt_residual > 0

    def test_matches_oracle_on_pentagon(self, pentagon):
        def f(p):
            return np.sin(np.pi * p[..., 0]) + p[..., 1]

        def y_d(p):
            return p[..., 0] * p[..., 1] - 0.3

        p = make_problem(pentagon, alpha=0.8, bounds=(-0.6, 0.4), f=f, y_d=y_d)
        sol = solve_control(p, tol=1e-11)
        u_star = qp_oracle(p)
        assert control_error_vs_control(sol.control, u_star) < 1e-8
        j_gap = abs(sol.objective - objective_value(p, u_star))
        assert j_gap <= 1e-12 * (1.0 + abs(sol.objective))


class TestKktResidual:
    def test_zero_for_trivial_problem(self, square4_odd):
        p = make_problem(square4_odd, bounds=(-1, 1))
        assert kkt_residual(p, BoundaryControl.zeros(square4_odd)) == 0.0

    def test_positive_away_from_optimum(self, square4_odd):
        prob = manufactured_inactive(1.0).with_mesh(square4_odd)
        rng = np.random.default_rng(3)
        u = BoundaryControl(
            square4_odd,
            np.clip(rng.standard_normal(square4_odd.n_boundary_edges),
                    prob.bounds.u_a, prob.bounds.u_b))
        assert kkt_residual(prob, u) > 1e-3

    def test_small_at_oracle_solution(self, pentagon):
        def y_d(p):
            return p[..., 0] + 0.5

        p = make_problem(pentagon, alpha=1.2, bounds=(-0.8, 0.9), y_d=y_d)
        u_star = qp_oracle(p)
        assert kkt_residual(p, u_star) <= 1e-8


class TestQpOracle:
    def test_refuses_large_boundaries(self):
        mesh = ensure_odd_boundary(triangulate_unit_square(8))
        p = make_problem(mesh)
        with pytest.raises(QpOracleSizeError):
            qp_oracle(p)

    def test_zero_problem(self, pentagon):
        p = make_problem(pentagon)
        u = qp_oracle(p)
        assert np.abs(u.coefficients).max() < 1e-12

    def test_hessian_spd(self, pentagon):
        def f(p):
            return p[..., 0]

        p = make_problem(pentagon, alpha=0.3, f=f)
        h_mat, _, _ = reduced_qp_matrices(p)
        assert np.allclose(h_mat, h_mat.T, atol=1e-13)
        assert np.linalg.eigvalsh(h_mat).min() > 0

    def test_inactive_solution_solves_linear_system(self, pentagon):
        def y_d(p):
            return 0.1 * p[..., 0]

        p = make_problem(pentagon, alpha=1.0, bounds=(-50.0, 50.0), y_d=y_d)
        u = qp_oracle(p)
        h_mat, c_vec, _ = reduced_qp_matrices(p)
        assert np.abs(h_mat @ u.coefficients + c_vec).max() < 1e-10
