"""
Tests of the bi-radial finite-difference solver and the lifting of its grid fields.
"""
import logging
import unittest

import numpy as np

from grushinlab.fields import Potential, catalog, sample_to_grid
from grushinlab.frequency import (
    check_boundary_forms,
    check_doubling,
    check_H_derivative,
    check_monotonicity,
    compute_profile,
    radius_grid,
    with_discretization_error,
)
from grushinlab.geometry import InputError, Point, Sample, SpaceParams
from grushinlab.quadrature import QuadratureSettings
from grushinlab.solver import (
    EXCISION,
    OutOfDomain,
    BVPSpec,
    GridSpec,
    SolveFailure,
    assemble,
    convergence_study,
    default_epsilon,
    field_bvp,
    l2_error,
    lift_to_ambient,
    mms_spec,
    solve,
    solve_and_lift,
)

LOG = logging.getLogger()
LOG.level = logging.WARN

SP = SpaceParams(5, 1, 1.0)


class TestGrid(unittest.TestCase):
    def test_spec(self):
        grid = GridSpec(1.0, 2.0, 17, 33)
        self.assertAlmostEqual(grid.h_s, 1.0 / 16)
        self.assertAlmostEqual(grid.h_t, 2.0 / 32)
        self.assertEqual(grid.size, 17 * 33)
        finer = grid.refined()
        self.assertEqual((finer.n_s, finer.n_t), (33, 65))
        self.assertAlmostEqual(finer.h_s, grid.h_s / 2)
        S, T = grid.mesh()
        self.assertEqual(S.shape, (17, 33))
        self.assertEqual(T[0, -1], 2.0)

    def test_coarsened(self):
        grid = GridSpec(1.0, 2.0, 65, 33)
        coarse = grid.coarsened()
        self.assertEqual((coarse.n_s, coarse.n_t), (33, 17))
        self.assertAlmostEqual(coarse.h_s, 2.0 * grid.h_s)
        self.assertEqual(coarse.refined(), grid)
        with self.assertRaises(InputError):
            GridSpec(1.0, 1.0, 17, 17).coarsened()

    def test_invalid(self):
        for args in [(1.0, 1.0, 15, 17), (1.0, 1.0, 17, 8), (0.0, 1.0, 17, 17), (1.0, -1.0, 17, 17)]:
            with self.assertRaises(InputError):
                GridSpec(*args)

    def test_inscribed_radius(self):
        self.assertAlmostEqual(GridSpec(1.0, 1.0, 17, 17).inscribed_radius(SP), 1.0)
        # sqrt(2 t_max) = 0.5 limits the ball along t
        self.assertAlmostEqual(GridSpec(1.0, 0.125, 17, 17).inscribed_radius(SP), 0.5)

    def test_default_epsilon(self):
        self.assertAlmostEqual(default_epsilon(GridSpec(1.0, 2.0, 17, 17)), 0.25)


class TestOperator(unittest.TestCase):
    """
    The stencil is exact on the quadratics s^2 and t^2, axis rules included.
    """

    def test_exact_on_quadratics(self):
        for sp in [SP, SpaceParams(3, 2, 0.5)]:
            grid = GridSpec(1.0, 1.0, 17, 21)
            op = assemble(grid, sp)
            S, T = grid.mesh()
            inner = (slice(0, -1), slice(0, -1))
            np.testing.assert_allclose(op.apply(S**2)[inner], 2.0 * sp.m, rtol=1e-10)
            np.testing.assert_allclose(
                op.apply(T**2)[inner], 2.0 * sp.n * S[inner] ** (2 * sp.alpha), rtol=1e-10, atol=1e-10
            )
            np.testing.assert_allclose(op.apply(np.ones(S.shape))[inner], 0.0, atol=1e-10)

    def test_edges_are_nan(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        result = assemble(grid, SP).apply(np.zeros((17, 17)))
        self.assertTrue(np.all(np.isnan(result[-1, :])))
        self.assertTrue(np.all(np.isnan(result[:, -1])))
        self.assertFalse(np.any(np.isnan(result[:-1, :-1])))


class TestSolve(unittest.TestCase):
    def test_constant_is_exact(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        solution = solve(field_bvp(grid, catalog(SP)["1"]))
        np.testing.assert_allclose(solution.u.values, 1.0, atol=1e-12)
        np.testing.assert_allclose(solution.w.values, 0.0, atol=1e-10)
        report = solution.report
        self.assertLess(report.residual, 1e-10)
        self.assertEqual(report.unknowns, 2 * 17 * 17)
        self.assertEqual(report.dirichlet_nodes, 17 + 17 - 1)
        self.assertEqual(report.as_dict()["regularization"], "smooth")

    def test_quadratic_is_exact(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        field = catalog(SP)["s^2"]
        solution = solve(field_bvp(grid, field))
        S, T = grid.mesh()
        np.testing.assert_allclose(solution.u.values, field.values(S, T), atol=1e-9)
        np.testing.assert_allclose(solution.w.values, field.laplacian_values(S, T), atol=1e-9)

    def test_excision(self):
        grid = GridSpec(1.0, 1.0, 33, 33)
        spec = field_bvp(grid, catalog(SP)["1"], Potential(1.0), EXCISION, rho_min=0.2)
        solution = solve(spec)
        self.assertGreater(solution.report.dirichlet_nodes, 33 + 33 - 1)
        self.assertEqual(solution.report.rho_min, 0.2)
        self.assertTrue(np.all(np.isfinite(solution.u.values)))

    def test_potential(self):
        grid = GridSpec(1.0, 1.0, 33, 33)
        potential = Potential(1.0, default_epsilon(grid))
        solution = solve(field_bvp(grid, catalog(SP)["1"], potential))
        self.assertEqual(solution.report.c0, 1.0)
        # With V > 0 the constant boundary data no longer gives a constant solution
        self.assertGreater(float(np.max(np.abs(solution.w.values))), 0.0)

    def test_spec_validation(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        field = catalog(SP)["1"]
        with self.assertRaises(InputError):
            field_bvp(grid, field, regularization=EXCISION, rho_min=0.0)
        with self.assertRaises(InputError):
            field_bvp(grid, field, Potential(1.0, 0.0))
        with self.assertRaises(InputError):
            field_bvp(grid, field, regularization="mollify")
        with self.assertRaises(InputError):
            solve(field_bvp(grid, field), assemble(GridSpec(1.0, 1.0, 33, 33), SP))

    def test_non_finite_data(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        spec = BVPSpec(grid, SP, lambda s, t: np.full(np.shape(s), np.nan), lambda s, t: np.zeros(np.shape(s)))
        with self.assertRaises(InputError):
            solve(spec)

    def test_residual_target(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        with self.assertRaises(SolveFailure):
            solve(mms_spec(grid, SP)[0], residual_target=1e-30)

    def test_maximum_principle(self):
        """
        Harmonic w data of zero leaves Delta_X u = 0, so non-negative u data keeps u non-negative.
        """
        for sp in [SP, SpaceParams(3, 2, 0.5)]:
            grid = GridSpec(1.0, 1.0, 33, 33)
            spec = BVPSpec(grid, sp, lambda s, t: s**2 * t**2, lambda s, t: np.zeros(np.shape(s)))
            solution = solve(spec)
            self.assertGreaterEqual(float(np.min(solution.u.values)), -1e-12, sp.label())
            self.assertLessEqual(float(np.max(solution.u.values)), 1.0 + 1e-12)
            np.testing.assert_allclose(solution.w.values, 0.0, atol=1e-12)


class TestConvergence(unittest.TestCase):
    def test_manufactured_solution(self):
        for sp in [SP, SpaceParams(3, 2, 0.5)]:
            grids = [GridSpec(1.0, 1.0, n, n) for n in [17, 33, 65]]
            rows = convergence_study(lambda grid: mms_spec(grid, sp), grids)
            self.assertEqual([row.n_s for row in rows], [17, 33, 65])
            self.assertTrue(np.isnan(rows[0].l2_rate))
            self.assertGreater(rows[-1].l2_rate, 1.8, sp.label())
            self.assertLess(rows[-1].l2_error, rows[0].l2_error)

    def test_manufactured_solution_with_potential(self):
        grids = [GridSpec(1.0, 1.0, n, n) for n in [33, 65]]
        rows = convergence_study(lambda grid: mms_spec(grid, SP, Potential(0.5, 0.1)), grids)
        self.assertGreater(rows[-1].l2_rate, 1.8)

    def test_l2_error(self):
        field = catalog(SP)["s^2*t^2"]
        grid = sample_to_grid(field, 1.0, 1.0, 17, 17)
        self.assertEqual(l2_error(grid, field, SP), 0.0)
        self.assertGreater(l2_error(grid, catalog(SP)["s^2"], SP), 0.0)


class TestLiftedField(unittest.TestCase):
    def test_values_and_derivatives(self):
        field = catalog(SP)["1+s^2-t^2"]
        lifted = lift_to_ambient(sample_to_grid(field, 1.0, 1.0, 33, 33), SP, "lifted")
        self.assertTrue(lifted.biradial)
        s = np.array([0.0, 0.3, 0.77, 1.0])
        t = np.array([0.5, 0.0, 0.41, 1.0])
        np.testing.assert_allclose(lifted.values(s, t), field.values(s, t), atol=1e-10)
        np.testing.assert_allclose(lifted.laplacian_values(s, t), field.laplacian_values(s, t), atol=1e-7)
        d_lifted = lifted.data(Sample.from_st(s, t, SP))
        d_exact = field.data(Sample.from_st(s, t, SP))
        np.testing.assert_allclose(d_lifted.grad_sq, d_exact.grad_sq, atol=1e-8)
        np.testing.assert_allclose(d_lifted.z, d_exact.z, atol=1e-8)
        self.assertIsNone(d_lifted.grad_lap_sq)

    def test_jet(self):
        field = catalog(SP)["s^2*t^2"]
        lifted = lift_to_ambient(sample_to_grid(field, 1.0, 1.0, 33, 33), SP)
        p = Point.of([[0.3, 0.1, 0.2, 0.0, 0.4]], [[0.6]])
        np.testing.assert_allclose(lifted.jet(p).value, field.jet(p).value, atol=1e-8)
        np.testing.assert_allclose(lifted.jet(p).grad, field.jet(p).grad, atol=1e-6)

    def test_out_of_domain(self):
        lifted = lift_to_ambient(sample_to_grid(catalog(SP)["1"], 1.0, 0.5, 17, 17), SP)
        with self.assertRaises(OutOfDomain):
            lifted.values(np.array([1.5]), np.array([0.1]))
        with self.assertRaises(OutOfDomain):
            lifted.values(np.array([0.5]), np.array([0.6]))

    def test_solve_and_lift(self):
        grid = GridSpec(1.0, 1.0, 17, 17)
        run = solve_and_lift(field_bvp(grid, catalog(SP)["1"]))
        self.assertEqual(run.u.name, "solution_u")
        self.assertEqual(run.w.name, "solution_w")
        np.testing.assert_allclose(run.u.values(np.array([0.5]), np.array([0.5])), 1.0, atol=1e-10)
        self.assertEqual(run.potential, Potential())


class TestFrequencyPipeline(unittest.TestCase):
    """
    Frequency of the solution of a problem with harmonic boundary data, on three grids doubling in resolution.
    """

    @classmethod
    def setUpClass(cls):
        potential = Potential(0.01, 0.125)
        harmonic = catalog(SP)["harmonic"]
        runs = [solve_and_lift(field_bvp(GridSpec(1.0, 1.0, n, n), harmonic, potential)) for n in [17, 33, 65]]
        cls.radii = radius_grid(0.25, 1.0, 16)
        settings = QuadratureSettings(rel_tol=1e-6, max_level=3)
        cls.profiles = []
        for coarse, fine, quad in [(runs[0], runs[1], settings), (runs[1], runs[2], settings.refined())]:
            profile = compute_profile(fine.u, cls.radii, quad, fine.w, fine.potential)
            companion = compute_profile(coarse.u, cls.radii, quad, coarse.w, coarse.potential)
            cls.profiles.append(with_discretization_error(profile, companion))

    def test_boundary_forms(self):
        for profile in self.profiles:
            self.assertLessEqual(check_boundary_forms(profile)["I1"], 1.0)

    def test_H_identity_improves(self):
        worst = [check_H_derivative(profile).worst for profile in self.profiles]
        self.assertLessEqual(worst[1], max(worst[0], 1e-3))
        self.assertLess(worst[1], 1e-2)

    def test_frequency_is_stable(self):
        for profile in self.profiles:
            self.assertTrue(np.all(profile["N"] > 1.0))
        results = [check_monotonicity(profile, 0.5) for profile in self.profiles]
        b1, b2 = results[0].beta_hat, results[1].beta_hat
        self.assertLessEqual(abs(b1 - b2), 0.2 * max(b1, b2) + results[0].beta_error + results[1].beta_error)
        doubling = [check_doubling(profile, result.beta_hat) for profile, result in zip(self.profiles, results)]
        d1, d2 = (float(np.max(d.ratios)) for d in doubling)
        self.assertLessEqual(abs(d1 - d2), 0.2 * max(d1, d2))
        self.assertEqual(doubling[0].h_level_holds, doubling[1].h_level_holds)
