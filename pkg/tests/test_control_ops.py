import numpy as np
import pytest

from crbc import (BoundaryControl, BoundaryTrace, BoxBounds,
                  SingularMatrixError, clamp_box, ensure_odd_boundary,
                  p0_project, p1_tilde, p1_tilde_operator_norm,
                  refine_uniform, regular_polygon_corners,
                  triangulate_polygon_fan, triangulate_unit_square)
from crbc.harness import control_error_vs_function, eoc, round_trip_defect


def unit_right_triangle():
    return triangulate_polygon_fan(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


class TestBoxBounds:
    def test_requires_order(self):
        with pytest.raises(ValueError):
            BoxBounds(1.0, 1.0)

    def test_clamp_within_unchanged(self):
        bounds = BoxBounds(-1.0, 2.0)
        w = np.array([-0.5, 0.0, 1.9])
        assert np.allclose(clamp_box(w, bounds), w)

    def test_clamp_above_everywhere(self, pentagon):
        bounds = BoxBounds(-1.0, 2.0)
        u = BoundaryControl.constant(pentagon, 3.0)
        out = clamp_box(u, bounds)
        assert isinstance(out, BoundaryControl)
        assert np.allclose(out.coefficients, 2.0)

    def test_idempotent_and_nonexpansive(self):
        rng = np.random.default_rng(0)
        bounds = BoxBounds(-0.3, 0.7)
        w = rng.standard_normal(50)
        v = rng.standard_normal(50)
        cw, cv = clamp_box(w, bounds), clamp_box(v, bounds)
        assert np.allclose(clamp_box(cw, bounds), cw)
        assert np.all(np.abs(cw - cv) <= np.abs(w - v) + 1e-15)
        assert cw.min() >= -0.3 and cw.max() <= 0.7


class TestP0Project:
    def test_constant_function(self, pentagon):
        u = p0_project(pentagon, lambda p: np.full(p.shape[0], 4.0))
        assert np.allclose(u.coefficients, 4.0, atol=1e-14)

    def test_linear_gives_midpoint_values(self, square4):
        def g(p):
            return 3.0 * p[:, 0] - p[:, 1]

        u = p0_project(square4, g)
        mids = square4.edge_midpoints[square4.boundary_cycle_edges]
        assert np.allclose(u.coefficients, g(mids), atol=1e-14)

    def test_trace_input_exact(self, square4_odd):
        rng = np.random.default_rng(2)
        z = BoundaryTrace(square4_odd,
                          rng.standard_normal(square4_odd.n_boundary_edges))
        u = p0_project(square4_odd, z)
        assert np.allclose(u.coefficients, z.edge_midpoint_values(),
                           atol=1e-14)

    def test_best_approximation_rate_one(self):
        errs, hs = [], []
        for n in (4, 8, 16, 32):
            mesh = triangulate_unit_square(n)
            total = mesh.boundary_arclength_breaks()[-1]

            def g(s):
                return np.sin(2.0 * np.pi * np.asarray(s) / total)

            u = p0_project(mesh, g, param="arclength")
            errs.append(control_error_vs_function(u, g))
            hs.append(1.0 / n)
        rates = eoc(errs, hs)
        assert np.all(np.abs(rates - 1.0) <= 0.05)


class TestP1Tilde:
    def test_constants_are_fixed_points(self, pentagon):
        u = BoundaryControl.constant(pentagon, 2.5)
        z = p1_tilde(pentagon, u)
        assert np.allclose(z.coefficients, 2.5, atol=1e-13)

    def test_n3_unit_impulse(self):
        tri = unit_right_triangle()
        u = BoundaryControl(tri, np.array([1.0, 0.0, 0.0]))
        z = p1_tilde(tri, u)
        assert np.allclose(z.coefficients, [1.0, 1.0, -1.0], atol=1e-13)

    def test_even_boundary_raises_with_hint(self):
        sq = triangulate_polygon_fan(
            np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
        u = BoundaryControl.constant(sq, 1.0)
        with pytest.raises(SingularMatrixError, match="ensure_odd_boundary"):
            p1_tilde(sq, u)

    @pytest.mark.parametrize("maker", [
        lambda: unit_right_triangle(),
        lambda: ensure_odd_boundary(triangulate_unit_square(3)),
        lambda: ensure_odd_boundary(
            refine_uniform(triangulate_polygon_fan(regular_polygon_corners(5)))),
    ])
    def test_round_trips_both_ways(self, maker):
        mesh = maker()
        assert round_trip_defect(mesh, n_samples=4, seed=1) < 1e-12


class TestOperatorNorm:
    def test_lower_bound_one(self, pentagon):
        assert p1_tilde_operator_norm(pentagon) >= 1.0 - 1e-12

    def test_even_boundary_raises(self):
        sq = triangulate_polygon_fan(
            np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
        with pytest.raises(SingularMatrixError):
            p1_tilde_operator_norm(sq)

    def test_scaling_invariance(self):
        for scale in (0.5, 3.0):
            a = triangulate_polygon_fan(regular_polygon_corners(5))
            b = triangulate_polygon_fan(regular_polygon_corners(5, radius=scale))
            assert p1_tilde_operator_norm(a) == pytest.approx(
                p1_tilde_operator_norm(b), rel=1e-11)

    def test_matches_dense_eigensolver_oracle(self, pentagon_fine):
        from crbc.assembly import assemble_boundary_mass, assemble_p0_matrix
        mesh = pentagon_fine
        got = p1_tilde_operator_norm(mesh)
        b = assemble_p0_matrix(mesh).to_dense()
        mg = assemble_boundary_mass(mesh)
        d = mesh.boundary_edge_lengths()
        binv = np.linalg.inv(b)
        k = binv.T @ mg @ binv
        c = k / np.sqrt(d)[:, None] / np.sqrt(d)[None, :]
        expected = np.sqrt(np.linalg.eigvalsh(0.5 * (c + c.T)).max())
        assert got == pytest.approx(expected, rel=1e-9)
