import os
import csv
import json
import shutil
import tempfile
from typing import Any, Dict, Iterator, List
from contextlib import contextmanager

from grushinlab.geometry import Point, SpaceParams, random_points


@contextmanager
def temp_dir() -> Iterator[str]:
    """
    Context manager for a scratch directory during a test. Will clean-up and delete the directory afterwards.

    Example:
        with temp_dir() as out_dir:
            # run commands writing into out_dir
        # directory is now deleted
    """
    path = tempfile.mkdtemp(prefix="_tmp_test")
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


@contextmanager
def write_config(dir_path: str, config: Dict[str, Any], name: str = "config.json") -> Iterator[str]:
    """
    Context manager for writing an experiment config as JSON. Will delete the file afterwards.
    """
    path = os.path.join(dir_path, name)
    with open(path, "w") as config_file:
        json.dump(config, config_file)
    try:
        yield path
    finally:
        if os.path.exists(path):
            os.remove(path)


def read_rows(file_path: str) -> List[Dict[str, str]]:
    with open(file_path, "r", newline="") as ifh:
        return list(csv.DictReader(ifh))


def check_header(self, file_path, expected_header_list):
    """
    Check that the first line of the CSV header matches expectation.
    """
    with open(file_path, "r") as ifh:
        header_columns = ifh.readlines()[0].strip().split(",")
        self.assertEqual(header_columns, expected_header_list)


def off_axis_points(sp: SpaceParams, count: int = 200, seed: int = 3, margin: float = 1e-3) -> Point:
    """Random points away from both axes, where every field of the catalog is smooth."""
    p = random_points(sp, count, seed)
    keep = (p.s > margin) & (p.t > margin)
    return Point(p.x[keep], p.y[keep])
