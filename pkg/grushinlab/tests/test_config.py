"""
Tests of experiment config loading, validation and the accessors built on it.
"""
import json
import logging
import unittest

from grushinlab.geometry import LabException, SpaceParams
from grushinlab.lab_config import (
    DEFAULT_CONFIG,
    ConfigInvalidException,
    field_by_name,
    hardy_spaces,
    identity_spaces,
    load_experiment_config,
    parse_experiment_config,
    potential,
    quadrature_settings,
    radii,
    solver_grids,
    space_params,
)
from .helpers import temp_dir, write_config

LOG = logging.getLogger()
LOG.level = logging.WARN


class TestParse(unittest.TestCase):
    def test_defaults(self):
        config = load_experiment_config(None)
        self.assertEqual(config, DEFAULT_CONFIG)
        config["space"]["m"] = 9
        self.assertEqual(DEFAULT_CONFIG["space"]["m"], 5)
        self.assertEqual(space_params(load_experiment_config(None)), SpaceParams(5, 1, 1.0))

    def test_merge(self):
        config = parse_experiment_config(json.dumps({"space": {"alpha": 0.5}, "solver": {"grids": [17]}}))
        self.assertEqual(config["space"], {"m": 5, "n": 1, "alpha": 0.5})
        self.assertEqual(config["solver"]["grids"], [17])
        self.assertEqual(config["solver"]["boundary"], DEFAULT_CONFIG["solver"]["boundary"])
        self.assertEqual(DEFAULT_CONFIG["space"]["alpha"], 1.0)

    def test_empty_document(self):
        self.assertEqual(parse_experiment_config(""), DEFAULT_CONFIG)
        self.assertEqual(parse_experiment_config("{}"), DEFAULT_CONFIG)

    def test_invalid(self):
        for text in [
            '{"spaces": {}}',
            '{"space": {"m": 5, "n": 1, "alpha": 1.0, "k": 2}}',
            '{"space": {"alpha": 0}}',
            '{"space": {"alpha": 1.5}}',
            '{"space": {"m": 0}}',
            '{"solver": {"grids": [8]}}',
            '{"quadrature": {"method": "mc"}}',
            '{"quadrature": {"qmc_points": 16, "qmc_replicates": 16}}',
            '{"radii": {"values": []}}',
            "[1, 2]",
            '{"space": ',
        ]:
            with self.assertRaises(ConfigInvalidException, msg=text):
                parse_experiment_config(text)

    def test_exception_is_lab_exception(self):
        with self.assertRaises(LabException):
            parse_experiment_config('{"output": "x"}', "bad.json")

    def test_load_file(self):
        with temp_dir() as out_dir:
            with write_config(out_dir, {"space": {"m": 3, "n": 2, "alpha": 0.5}}) as config_path:
                config = load_experiment_config(config_path)
            with write_config(out_dir, {"space": {"m": -1}}) as config_path:
                with self.assertRaises(ConfigInvalidException):
                    load_experiment_config(config_path)
        self.assertEqual(space_params(config), SpaceParams(3, 2, 0.5))


class TestAccessors(unittest.TestCase):
    def test_radii(self):
        config = parse_experiment_config('{"radii": {"values": [2.0, 0.5, 1.0, 0.5]}}')
        self.assertEqual(list(radii(config)), [0.5, 1.0, 2.0])
        self.assertEqual(radii(load_experiment_config(None)).size, 40)

    def test_potential(self):
        config = parse_experiment_config('{"potential": {"c0": 1.5}}')
        # Fixed by the coarsest grid, 65 nodes on [0, 1]
        self.assertAlmostEqual(potential(config).epsilon, 2.0 / 64)
        self.assertEqual(potential(config).c0, 1.5)
        config = parse_experiment_config('{"potential": {"c0": 1.5}, "solver": {"grids": [129, 33]}}')
        self.assertAlmostEqual(potential(config).epsilon, 2.0 / 32)
        config = parse_experiment_config('{"potential": {"c0": 1.5, "epsilon": 0.3}}')
        self.assertEqual(potential(config).epsilon, 0.3)

    def test_hardy_spaces(self):
        config = load_experiment_config(None)
        self.assertEqual(hardy_spaces(config), [SpaceParams(5, 1, 1.0), SpaceParams(5, 1, 0.5)])
        config = parse_experiment_config('{"hardy": {"alphas": [1.0]}}')
        self.assertEqual(hardy_spaces(config), [SpaceParams(5, 1, 1.0)])

    def test_identity_spaces(self):
        self.assertEqual(len(identity_spaces(load_experiment_config(None))), 3)
        config = parse_experiment_config('{"space": {"m": 2}, "identities": {"spaces": []}}')
        self.assertEqual(identity_spaces(config), [SpaceParams(2, 1, 1.0)])
        config = parse_experiment_config('{"identities": {"spaces": [[3, 1, 2.0]]}}')
        with self.assertRaises(ConfigInvalidException):
            identity_spaces(config)

    def test_field_by_name(self):
        sp = SpaceParams(5, 1, 1.0)
        self.assertEqual(field_by_name("rho^2", sp).name, "rho^2")
        with self.assertRaises(ConfigInvalidException):
            field_by_name("rho^3", sp)

    def test_quadrature_settings(self):
        settings = quadrature_settings(load_experiment_config(None), workers=4)
        self.assertEqual(settings.workers, 4)
        self.assertEqual(settings.qmc_points, 2**18)
        with self.assertRaises(ConfigInvalidException):
            quadrature_settings(load_experiment_config(None), workers=0)

    def test_solver_grids(self):
        grids = solver_grids(load_experiment_config(None))
        self.assertEqual([grid.n_s for grid in grids], [65, 129, 257])
        self.assertTrue(all(grid.n_s == grid.n_t for grid in grids))
