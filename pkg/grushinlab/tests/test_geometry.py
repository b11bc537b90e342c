"""
Tests of the gauge geometry: dilations, gauge norm, angle function and the identities between them.
"""
import logging
import unittest

import numpy as np

from grushinlab.fields import catalog, rho_power
from grushinlab.geometry import (
    DegeneratePoint,
    InputError,
    Point,
    SpaceParams,
    dilate,
    fd_jet,
    gauge,
    gauge_jet,
    horizontal_gradient,
    horizontal_hessian,
    identity_residuals,
    laplace_X,
    laplace_gradient,
    psi,
    random_points,
    z_derivative,
)
from .helpers import off_axis_points

LOG = logging.getLogger()
LOG.level = logging.WARN

SPACES = [SpaceParams(5, 1, 1.0), SpaceParams(5, 1, 0.5), SpaceParams(3, 2, 1.0)]


class TestSpaceParams(unittest.TestCase):
    def test_dimensions(self):
        sp = SpaceParams(5, 1, 1.0)
        self.assertEqual(sp.Q, 7.0)
        self.assertEqual(sp.dim, 6)
        self.assertEqual(sp.kappa, 4.0)
        self.assertTrue(sp.hardy_ok and sp.rellich_ok and sp.suc_ok)
        self.assertEqual(sp.label(), "m=5,n=1,alpha=1")

        low = SpaceParams(2, 1, 0.5)
        self.assertEqual(low.Q, 3.5)
        self.assertFalse(low.hardy_ok or low.rellich_ok or low.suc_ok)

    def test_invalid(self):
        for m, n, alpha in [(0, 1, 1.0), (3, 0, 1.0), (3, 1, 0.0), (3, 1, -0.5), (3, 1, 1.5), (2.5, 1, 1.0)]:
            with self.assertRaises(InputError):
                SpaceParams(m, n, alpha)

    def test_point_must_be_finite(self):
        with self.assertRaises(InputError):
            Point.of([1.0, float("nan")], [0.0])
        with self.assertRaises(InputError):
            Point.of([1.0], [float("inf")])
        p = Point.of([3.0, 4.0], [0.0, 2.0])
        self.assertEqual(float(p.s), 5.0)
        self.assertEqual(float(p.t), 2.0)


class TestGauge(unittest.TestCase):
    """
    Tests of the gauge norm, the dilations and the angle function.
    """

    def test_gauge_values(self):
        sp = SpaceParams(1, 1, 1.0)
        # rho^4 = s^4 + 4 t^2
        self.assertAlmostEqual(float(gauge(Point.of([1.0], [0.0]), sp)), 1.0)
        self.assertAlmostEqual(float(gauge(Point.of([0.0], [0.5]), sp)), 1.0)
        self.assertAlmostEqual(float(gauge(Point.of([1.0], [0.5]), sp)), 2.0**0.25)

    def test_homogeneity(self):
        for sp in SPACES:
            p = random_points(sp, 100, seed=5)
            for lam in [0.3, 1.0, 2.5]:
                np.testing.assert_allclose(gauge(dilate(p, lam, sp), sp), lam * gauge(p, sp), rtol=1e-13)
            # psi is invariant under dilations
            np.testing.assert_allclose(psi(dilate(p, 1.7, sp), sp), psi(p, sp), rtol=1e-12)

    def test_dilate_invalid(self):
        sp = SpaceParams(3, 1, 1.0)
        p = random_points(sp, 4, seed=0)
        with self.assertRaises(InputError):
            dilate(p, 0.0, sp)
        with self.assertRaises(InputError):
            dilate(p, np.array([1.0, -1.0, 1.0, 1.0]), sp)

    def test_random_points(self):
        sp = SpaceParams(5, 1, 0.5)
        p = random_points(sp, 500, seed=9, r_min=0.5, r_max=2.0)
        rho = gauge(p, sp)
        self.assertTrue(np.all(rho >= 0.5 - 1e-12) and np.all(rho <= 2.0 + 1e-12))
        np.testing.assert_array_equal(random_points(sp, 500, seed=9).x, p.x)

    def test_psi_range(self):
        for sp in SPACES:
            value = psi(random_points(sp, 300, seed=2), sp)
            self.assertTrue(np.all(value >= 0.0) and np.all(value <= 1.0))

    def test_origin_is_degenerate(self):
        sp = SpaceParams(3, 1, 1.0)
        origin = Point.of([0.0, 0.0, 0.0], [0.0])
        self.assertEqual(float(gauge(origin, sp)), 0.0)
        with self.assertRaises(DegeneratePoint):
            psi(origin, sp)
        with self.assertRaises(DegeneratePoint):
            gauge_jet(origin, sp)


class TestDerivatives(unittest.TestCase):
    """
    Tests comparing analytic jets with finite differences, and the horizontal operators built on them.
    """

    def test_gauge_jet_matches_finite_differences(self):
        for sp in SPACES:
            p = off_axis_points(sp, 40, seed=4, margin=0.1)
            exact = gauge_jet(p, sp)
            approx = fd_jet(lambda q: gauge(q, sp), p, sp)
            np.testing.assert_allclose(approx.grad, exact.grad, atol=1e-8)
            np.testing.assert_allclose(approx.hess, exact.hess, atol=1e-5)

    def test_gauge_identities(self):
        for sp in SPACES:
            p = off_axis_points(sp, 200, seed=6)
            j = gauge_jet(p, sp)
            rho, ang = j.value, psi(p, sp)
            np.testing.assert_allclose(np.sum(horizontal_gradient(j, p, sp) ** 2, axis=-1), ang, atol=1e-12)
            np.testing.assert_allclose(z_derivative(j, p, sp), rho, rtol=1e-12)
            np.testing.assert_allclose(laplace_X(j, p, sp), (sp.Q - 1.0) * ang / rho, rtol=1e-10, atol=1e-12)

    def test_horizontal_hessian_trace(self):
        sp = SpaceParams(3, 2, 0.5)
        p = off_axis_points(sp, 50, seed=8, margin=0.1)
        field = rho_power(4.0, sp)
        j = field.jet(p)
        trace = np.trace(horizontal_hessian(j, p, sp), axis1=-2, axis2=-1)
        np.testing.assert_allclose(trace, laplace_X(j, p, sp), rtol=1e-12)

    def test_laplace_gradient(self):
        sp = SpaceParams(5, 1, 1.0)
        p = off_axis_points(sp, 30, seed=12, margin=0.1)
        field = catalog(sp)["s^2*t^2"]
        exact = laplace_gradient(field.jet(p), p, sp)
        approx = fd_jet(lambda q: laplace_X(field.jet(q), q, sp), p, sp)
        np.testing.assert_allclose(approx.grad, exact, atol=1e-7)

    def test_laplacian_needs_hessian(self):
        sp = SpaceParams(3, 1, 1.0)
        p = off_axis_points(sp, 5)
        first_order = fd_jet(lambda q: gauge(q, sp), p, sp)
        with self.assertRaises(InputError):
            laplace_gradient(first_order, p, sp)


class TestIdentityResiduals(unittest.TestCase):
    def test_identities_hold(self):
        for sp in SPACES:
            fields = catalog(sp)
            p = off_axis_points(sp, 150, seed=1, margin=0.1)
            for name in ["rho^4", "s^2*t^2", "1+s^2-t^2", "harmonic", "x1"]:
                worst = identity_residuals(p, sp, fields[name]).worst()
                for key in ["laplace_rho", "z_rho", "gradient_pairing", "angle", "commutator"]:
                    self.assertLess(worst[key], 1e-6, f"{key} for {name} in {sp.label()}")
                self.assertGreaterEqual(worst["z_bound_slack"], -1e-9)

    def test_commutator_against_z_fails(self):
        """
        The bracket [X_i, Z] reproduces X_i, so comparing it with Z leaves a residual of order one.
        """
        sp = SpaceParams(5, 1, 1.0)
        p = off_axis_points(sp, 100, seed=2, margin=0.1)
        for name in ["rho^4", "x1"]:
            worst = identity_residuals(p, sp, catalog(sp)[name]).worst()
            self.assertGreater(worst["commutator_as_z"], 1e-2)
            self.assertLess(worst["commutator"], 1e-6)
