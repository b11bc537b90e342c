"""
Tests of ball and sphere integration over gauge balls.
"""
import math
import logging
import unittest

import numpy as np
from scipy.special import beta as beta_fn

from grushinlab.geometry import InputError, SpaceParams
from grushinlab.quadrature import (
    QMC,
    REDUCED2D,
    NonIntegrableWeight,
    QuadratureSettings,
    Weight,
    ball_integral,
    gauss_nodes,
    graded_breaks,
    scaling_exponent,
    self_test,
    settings_for,
    shell_step,
    sphere_area,
    sphere_integral,
)

LOG = logging.getLogger()
LOG.level = logging.WARN


def unit_ball_volume(sp: SpaceParams) -> float:
    k = sp.kappa
    return (
        sphere_area(sp.m)
        * sphere_area(sp.n)
        * beta_fn(sp.m / k, sp.n / 2.0 + 1.0)
        / (sp.n * (sp.alpha + 1.0) ** sp.n * k)
    )


def ones(smp):
    return np.ones(np.shape(smp.rho))


class TestRules(unittest.TestCase):
    def test_sphere_area(self):
        self.assertAlmostEqual(sphere_area(1), 2.0)
        self.assertAlmostEqual(sphere_area(2), 2.0 * math.pi)
        self.assertAlmostEqual(sphere_area(3), 4.0 * math.pi)

    def test_graded_breaks(self):
        self.assertEqual(graded_breaks(0.0, 1.0, 3, [0.3, 2.0]), [0.0, 0.25, 0.3, 0.5, 1.0])

    def test_gauss_nodes(self):
        x, w = gauss_nodes([0.0, 1.0, 2.0], 2)
        self.assertEqual(x.size, 4)
        self.assertAlmostEqual(float(np.sum(w * x**3)), 4.0)


class TestReduced(unittest.TestCase):
    """
    Tests of the bi-radial (rho, theta) integration rule against closed forms.
    """

    def test_unit_ball_volume(self):
        sp = SpaceParams(1, 1, 1.0)
        value = ball_integral(ones, 1.0, sp).value
        self.assertAlmostEqual(unit_ball_volume(sp), 0.5 * beta_fn(0.25, 1.5))
        self.assertLess(abs(value - unit_ball_volume(sp)), 1e-6 * unit_ball_volume(sp))

    def test_volumes(self):
        for sp in [SpaceParams(5, 1, 1.0), SpaceParams(3, 2, 0.5)]:
            for r in [0.5, 1.0, 2.0]:
                result = ball_integral(ones, r, sp)
                self.assertEqual(result.method, REDUCED2D)
                expected = unit_ball_volume(sp) * r**sp.Q
                self.assertLess(abs(result.value - expected), 1e-7 * expected, f"{sp.label()} r={r}")

    def test_sphere_is_volume_derivative(self):
        sp = SpaceParams(5, 1, 1.0)
        value = sphere_integral(ones, 1.0, sp).value
        expected = sp.Q * unit_ball_volume(sp)
        self.assertLess(abs(value - expected), 1e-7 * expected)

    def test_scaling_exponent(self):
        sp = SpaceParams(3, 2, 0.5)
        self.assertAlmostEqual(scaling_exponent(sp, QuadratureSettings()), sp.Q, places=6)

    def test_self_test(self):
        for sp in [SpaceParams(5, 1, 1.0), SpaceParams(3, 1, 0.5)]:
            items = self_test(sp)
            self.assertEqual([item.name for item in items], ["scaling_exponent", "co_area", "divergence"])
            for item in items:
                self.assertTrue(item.passed, f"{item.name}: {item.value} vs {item.expected}")

    def test_workers_do_not_change_result(self):
        sp = SpaceParams(5, 1, 1.0)

        def f(smp):
            return np.square(smp.rho) * smp.psi

        single = ball_integral(f, 1.0, sp, QuadratureSettings(workers=1)).value
        threaded = ball_integral(f, 1.0, sp, QuadratureSettings(workers=4)).value
        self.assertEqual(single, threaded)

    def test_non_integrable(self):
        with self.assertRaises(NonIntegrableWeight):
            ball_integral(ones, 1.0, SpaceParams(2, 1, 1.0), weight=Weight(x_power=2.0))
        with self.assertRaises(NonIntegrableWeight):
            ball_integral(ones, 1.0, SpaceParams(3, 1, 1.0), weight=Weight(degree=5.0))
        # Q = 7 here, so rho^-6 is fine
        Weight(degree=6.0).check(SpaceParams(5, 1, 1.0))

    def test_radius_must_be_positive(self):
        with self.assertRaises(InputError):
            ball_integral(ones, 0.0, SpaceParams(3, 1, 1.0))
        with self.assertRaises(InputError):
            sphere_integral(ones, -1.0, SpaceParams(3, 1, 1.0))


class TestQMC(unittest.TestCase):
    settings = QuadratureSettings(method=QMC, qmc_points=2**14, qmc_replicates=8)

    def test_volume(self):
        sp = SpaceParams(5, 1, 1.0)
        result = ball_integral(ones, 1.0, sp, self.settings)
        expected = unit_ball_volume(sp)
        self.assertEqual(result.method, QMC)
        self.assertGreater(result.error_estimate, 0.0)
        self.assertLess(abs(result.value - expected), max(6.0 * result.error_estimate, 0.02 * expected))

    def test_sphere_matches_reduced(self):
        sp = SpaceParams(3, 1, 1.0)

        def f(smp):
            return np.square(smp.rho) * smp.psi

        reduced = sphere_integral(f, 1.0, sp).value
        sampled = sphere_integral(f, 1.0, sp, self.settings).value
        self.assertLess(abs(sampled - reduced), 0.05 * reduced)

    def test_deterministic(self):
        sp = SpaceParams(3, 1, 0.5)
        first = ball_integral(ones, 1.0, sp, self.settings).value
        second = ball_integral(ones, 1.0, sp, self.settings).value
        threaded = ball_integral(ones, 1.0, sp, QuadratureSettings(QMC, qmc_points=2**14, workers=3)).value
        self.assertEqual(first, second)
        self.assertEqual(first, threaded)

    def test_sphere_is_shell_difference(self):
        """
        For f = 1 the shell difference only carries the sampling error of the unit ball volume.
        """
        sp = SpaceParams(5, 1, 1.0)
        result = sphere_integral(ones, 1.0, sp, self.settings)
        volume = ball_integral(ones, 1.0, sp, self.settings)
        h = shell_step(1.0, self.settings)
        np.testing.assert_allclose(result.value, volume.value * ((1.0 + h) ** 7 - (1.0 - h) ** 7) / (2.0 * h))
        self.assertLess(abs(result.value - sp.Q * unit_ball_volume(sp)), 0.02 * sp.Q * unit_ball_volume(sp))

    def test_shell_step(self):
        self.assertAlmostEqual(shell_step(2.0, self.settings), 2e-3)
        self.assertAlmostEqual(shell_step(1.0, QuadratureSettings(method=QMC, rel_tol=1e-4)), 0.1)
        self.assertAlmostEqual(shell_step(1.0, QuadratureSettings(method=QMC, rel_tol=1e-2)), 0.1)


class TestSettings(unittest.TestCase):
    def test_invalid(self):
        for kwargs in [
            {"method": "mc"},
            {"node_factor": 0},
            {"qmc_replicates": 1},
            {"qmc_points": 8, "qmc_replicates": 8},
            {"workers": 0},
            {"rel_tol": 0.0},
            {"max_level": 0},
        ]:
            with self.assertRaises(InputError):
                QuadratureSettings(**kwargs)

    def test_refined(self):
        self.assertEqual(QuadratureSettings(node_factor=2).refined().node_factor, 4)

    def test_settings_for(self):
        settings = QuadratureSettings()
        self.assertIs(settings_for(True, settings), settings)
        self.assertEqual(settings_for(False, settings).method, QMC)
        self.assertEqual(settings_for(False, settings).rel_tol, settings.rel_tol)
        self.assertEqual(settings_for(False).method, QMC)
