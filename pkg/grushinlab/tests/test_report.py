"""
Tests of result file writing and of the summary of an output directory.
"""
import os
import json
import math
import logging
import unittest

import numpy as np

from grushinlab.fields import catalog, sample_to_grid
from grushinlab.geometry import InputError, SpaceParams
from grushinlab.hardy import CSV_COLUMNS, run_suite
from grushinlab.lab_report import SUMMARY_FILE, format_float, read_csv, summarize, write_csv, write_json
from .helpers import check_header, temp_dir

LOG = logging.getLogger()
LOG.level = logging.WARN


class TestWrite(unittest.TestCase):
    def test_csv(self):
        with temp_dir() as out_dir:
            path = os.path.join(out_dir, "table.csv")
            write_csv(path, ["name", "value", "passed"], [["a", 0.1, True], ["b", 2, False]], config={"seed": 1})
            with open(path, "rb") as ifh:
                raw = ifh.read()
            check_header(self, path, ["name", "value", "passed"])
            rows = read_csv(path)
            with open(os.path.join(out_dir, "table.config.json")) as ifh:
                sidecar = json.load(ifh)
        self.assertIn(b"\r\n", raw)
        self.assertEqual(rows[0], {"name": "a", "value": "0.10000000000000001", "passed": "true"})
        self.assertEqual(rows[1]["passed"], "false")
        self.assertEqual(sidecar, {"config": {"seed": 1}})

    def test_format_float(self):
        for value in [0.1, 1.0 / 3.0, 2.0**-30, 1e300]:
            self.assertEqual(float(format_float(value)), value)

    def test_json(self):
        with temp_dir() as out_dir:
            path = os.path.join(out_dir, "nested", "result.json")
            write_json(path, {"nan": math.nan, "values": np.array([1.0, np.inf]), "inner": {"ok": True}})
            with open(path) as ifh:
                data = json.load(ifh)
        self.assertEqual(data, {"nan": None, "values": [1.0, None], "inner": {"ok": True}})


class TestSummarize(unittest.TestCase):
    def _write_results(self, out_dir):
        sp = SpaceParams(5, 1, 1.0)
        reports = run_suite([catalog(sp)["1"]], [1.0], checks=["hardy_gauge", "grad_hardy"])
        write_csv(os.path.join(out_dir, "hardy.csv"), CSV_COLUMNS, [r.row() for r in reports], config={})
        sample_to_grid(catalog(sp)["s^2"], 1.0, 1.0, 5, 5).to_csv(os.path.join(out_dir, "solution_u.csv"))
        write_csv(os.path.join(out_dir, "identities.csv"), ["space", "passed"], [["a", True], ["b", False]])
        write_json(os.path.join(out_dir, "solve.json"), {"passed": True, "residual": 1e-15})

    def test_summary(self):
        with temp_dir() as out_dir:
            self._write_results(out_dir)
            summary = summarize(out_dir)
            with open(os.path.join(out_dir, SUMMARY_FILE)) as ifh:
                on_disk = json.load(ifh)
        self.assertEqual(on_disk, summary)
        self.assertEqual(summary["schema_version"], 1)
        self.assertEqual(summary["inequalities"]["hardy_gauge"]["PASS"], 1)
        self.assertEqual(summary["inequalities"]["grad_hardy"]["REPORT"], 1)
        self.assertAlmostEqual(summary["inequalities"]["hardy_gauge"]["max_empirical_constant"], 0.5, places=6)
        self.assertEqual(summary["files"]["solution_u.csv"], {"grid_field": True, "n_s": 5, "n_t": 5})
        self.assertEqual(summary["files"]["identities.csv"]["failed_rows"], 1)
        self.assertNotIn("hardy.config", summary["results"])
        self.assertEqual(summary["results"]["solve"]["passed"], True)
        self.assertEqual(summary["failed"], ["identities"])
        self.assertFalse(summary["passed"])

    def test_failed_json_result(self):
        with temp_dir() as out_dir:
            write_json(os.path.join(out_dir, "frequency.json"), {"passed": False})
            summary = summarize(out_dir)
        self.assertEqual(summary["failed"], ["frequency"])

    def test_deterministic(self):
        with temp_dir() as out_dir:
            self._write_results(out_dir)
            summarize(out_dir)
            with open(os.path.join(out_dir, SUMMARY_FILE), "rb") as ifh:
                first = ifh.read()
            summarize(out_dir)
            with open(os.path.join(out_dir, SUMMARY_FILE), "rb") as ifh:
                second = ifh.read()
        self.assertEqual(first, second)

    def test_missing_results(self):
        with temp_dir() as out_dir:
            with self.assertRaises(InputError):
                summarize(out_dir)
            with self.assertRaises(InputError):
                summarize(os.path.join(out_dir, "missing"))
