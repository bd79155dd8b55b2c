import numpy as np
import pytest
import sympy as sp

from crbc import (BoundaryControl, ProblemSpec, solve_control,
                  triangulate_unit_square)
from crbc.control_ops import BoxBounds
from crbc.harness import (ConvergenceTable, MeshFamily, StudyError,
                          control_error_vs_control,
                          control_error_vs_function, control_on_mesh,
                          convergence_study, eoc, manufactured_active,
                          manufactured_inactive, reference_solution)
from crbc.report import parse_csv, table_to_csv


class TestManufacturedInactiveSymbolically:
    """The closed-form optimality system checked with exact algebra."""

    def setup_method(self):
        self.alpha = sp.Rational(7, 5)
        x1, x2 = sp.symbols("x1 x2")
        self.x1, self.x2 = x1, x2
        pi = sp.pi
        self.theta = sp.sin(pi * x1) * sp.sin(pi * x2)
        self.state = -(pi / self.alpha) * (sp.sin(pi * x1) + sp.sin(pi * x2))
        self.f = pi ** 2 * self.state
        self.y_d = self.state - 2 * pi ** 2 * self.theta

    def laplacian(self, expr):
        return sp.diff(expr, self.x1, 2) + sp.diff(expr, self.x2, 2)

    def test_state_equation(self):
        assert sp.simplify(-self.laplacian(self.state) - self.f) == 0

    def test_adjoint_equation(self):
        residual = -self.laplacian(self.theta) - (self.state - self.y_d)
        assert sp.simplify(residual) == 0

    def test_adjoint_vanishes_on_boundary(self):
        for sub in ({self.x1: 0}, {self.x1: 1}, {self.x2: 0}, {self.x2: 1}):
            assert sp.simplify(self.theta.subs(sub)) == 0

    def test_control_is_scaled_normal_derivative(self):
        # bottom side: outward normal (0, -1)
        dn = -sp.diff(self.theta, self.x2).subs({self.x2: 0})
        control = dn / self.alpha
        expected = -(sp.pi / self.alpha) * sp.sin(sp.pi * self.x1)
        assert sp.simplify(control - expected) == 0

    def test_clamp_inactive(self):
        # control range is [-pi/alpha, 0]; the bounds keep a margin
        alpha = float(self.alpha)
        prob = manufactured_inactive(alpha)
        lo = -np.pi / alpha
        assert prob.bounds.u_a < lo
        assert prob.bounds.u_b > 0.0


class TestManufacturedInactiveNumerics:
    def test_side_midpoint_values(self):
        prob = manufactured_inactive(2.0)
        s_mid = np.array([0.5, 1.5, 2.5, 3.5])
        vals = prob.exact.control(s_mid)
        assert np.allclose(vals, -np.pi / 2.0, atol=1e-14)

    def test_corner_values_vanish(self):
        prob = manufactured_inactive(1.0)
        corners = np.array([0.0, 1.0, 2.0, 3.0])
        assert np.allclose(prob.exact.control(corners), 0.0, atol=1e-14)

    def test_flux_is_alpha_times_control(self):
        prob = manufactured_inactive(3.0)
        s = np.linspace(0, 4, 33)
        assert np.allclose(prob.exact.flux(s), 3.0 * prob.exact.control(s),
                           atol=1e-13)


class TestManufacturedActive:
    def test_default_bound_matches_half_clip(self):
        prob = manufactured_active(1.0)
        assert prob.bounds.u_a == pytest.approx(-np.pi / 2.0, rel=1e-14)

    def test_active_set_nonempty_on_coarse_solve(self):
        mesh = MeshFamily("square", n0=4).mesh(0)
        prob = manufactured_active(1.0).with_mesh(mesh)
        sol = solve_control(prob)
        at_bound = np.isclose(sol.control.coefficients, prob.bounds.u_a,
                              atol=1e-9)
        assert at_bound.sum() > 0
        assert np.all(sol.control.coefficients >= prob.bounds.u_a - 1e-15)

    def test_invalid_clip_fraction(self):
        with pytest.raises(ValueError):
            manufactured_active(1.0, clip_fraction=1.5)

    def test_point_bounds_force_constant(self):
        mesh = MeshFamily("square", n0=4).mesh(0)
        base = manufactured_active(1.0)
        eps = 1e-7
        prob = ProblemSpec(mesh, 1.0, BoxBounds(-0.25, -0.25 + eps),
                           f=base.f, y_d=base.y_d)
        sol = solve_control(prob)
        assert np.all(np.abs(sol.control.coefficients + 0.25) <= eps)

    def test_reference_quality_two_reference_comparison(self):
        # the measured finest-level error moves by well under 10% when the
        # reference is upgraded by one more level
        fam = MeshFamily("square", n0=2)
        prob = manufactured_active(1.0)
        sol = solve_control(prob.with_mesh(fam.mesh(2)))
        ref3 = reference_solution(prob, fam.mesh(5))
        ref4 = reference_solution(prob, fam.mesh(6))
        e3 = control_error_vs_control(sol.control, ref3.control)
        e4 = control_error_vs_control(sol.control, ref4.control)
        assert abs(e3 - e4) < 0.10 * e3


class TestReferenceSolution:
    def test_agrees_with_closed_form_to_discretization_error(self):
        fam = MeshFamily("square", n0=4)
        prob = manufactured_inactive(1.0)
        mesh = fam.mesh(2)
        ref = reference_solution(prob, mesh, tol=1e-11)
        err = control_error_vs_function(ref.control, prob.exact.control)
        # the closed-form gap is the discretization error of this level
        # (constant ~ pi^2/alpha), far above the solver tolerance
        assert err < 4.0 * mesh.h
        # and the reference is the same discrete minimizer the iterative
        # solver finds on that mesh
        direct = solve_control(prob.with_mesh(mesh), tol=1e-11)
        assert control_error_vs_control(ref.control, direct.control) < 1e-9

    def test_reference_is_feasible_with_tiny_residual(self):
        fam = MeshFamily("square", n0=4)
        prob = manufactured_active(1.0)
        ref = reference_solution(prob, fam.mesh(2), tol=1e-11)
        assert ref.kkt_residual <= 1e-10
        assert np.all(ref.control.coefficients >= prob.bounds.u_a - 1e-15)
        assert np.all(ref.control.coefficients <= prob.bounds.u_b + 1e-15)


class TestErrorMetrics:
    def test_control_error_exact_on_hand_case(self):
        # two partitions of the unit-square boundary with known mismatch
        coarse = triangulate_unit_square(1)
        fine = triangulate_unit_square(2)
        u_c = BoundaryControl(coarse, np.array([1.0, 0.0, 0.0, 0.0]))
        u_f = BoundaryControl.zeros(fine)
        # difference is 1 on the bottom side only: L2 norm sqrt(1)
        err = control_error_vs_control(u_c, u_f)
        assert err == pytest.approx(1.0, rel=1e-14)

    def test_control_transfer_preserves_values(self):
        coarse = MeshFamily("square", n0=2).mesh(0)
        fine = MeshFamily("square", n0=2).mesh(2)
        rng = np.random.default_rng(0)
        u = BoundaryControl(coarse,
                            rng.standard_normal(coarse.n_boundary_edges))
        v = control_on_mesh(u, fine)
        assert control_error_vs_control(u, v) < 1e-14

    def test_eoc_exact_for_synthetic_sequences(self):
        rate = 1.75
        hs = np.array([0.4 / 2 ** k for k in range(5)])
        errs = 3.0 * hs ** 0.0 * 2.0 ** (-rate * np.arange(5))
        rates = eoc(errs, hs)
        assert np.allclose(rates, rate, atol=1e-13)


class TestConvergenceStudyMachinery:
    def test_table_csv_round_trip_bit_for_bit(self):
        table = ConvergenceTable(["control_error"])
        rng = np.random.default_rng(1)
        for k in range(3):
            table.add_row(level=k, h=0.5 ** k, n_boundary=2 * k + 5,
                          control_error=float(rng.uniform(1e-8, 1.0)),
                          kkt_residual=float(rng.uniform(0, 1e-9)),
                          iterations=k * 7, wall_time=float(rng.uniform(0, 2)))
        table.finalize()
        text = table_to_csv(table)
        names, rows = parse_csv(text)
        rebuilt = ConvergenceTable(["control_error"])
        rebuilt.rows = rows
        rebuilt_text = table_to_csv(rebuilt)
        assert rebuilt_text == text

    def test_small_study_columns_and_determinism(self):
        prob = manufactured_inactive(1.0)
        t1 = convergence_study(prob, 2, domain="square", n0=2,
                               metrics=("control_error", "p0_gap"))
        t2 = convergence_study(prob, 2, domain="square", n0=2,
                               metrics=("control_error", "p0_gap"))
        assert "eoc_control_error" in t1.column_names
        for name in ("control_error", "p0_gap", "h"):
            assert np.array_equal(t1.column(name), t2.column(name))
        assert np.all(np.diff(t1.column("h")) < 0)

    def test_failure_aborts_with_partial_table(self):
        prob = manufactured_inactive(1.0)
        with pytest.raises(StudyError) as info:
            convergence_study(prob, 3, domain="square", n0=2, max_iter=2)
        assert info.value.table is not None

    def test_pentagon_family_levels(self):
        fam = MeshFamily("pentagon")
        m0, m1 = fam.mesh(0), fam.mesh(1)
        assert m0.n_boundary_edges == 5
        assert m1.n_boundary_edges == 11  # doubled then odd-adjusted
