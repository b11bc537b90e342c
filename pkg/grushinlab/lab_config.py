"""Module with functions for loading and validating experiment configs."""
import os
import copy
import logging
from typing import Any, Dict, List, Optional, cast

import yaml
import fastjsonschema
import numpy as np

from .fields import AnalyticField, Potential, catalog
from .frequency import radius_grid
from .geometry import InputError, LabException, SpaceParams
from .quadrature import QuadratureSettings
from .solver import GridSpec, default_epsilon
from .utils import recursive_update

_log = logging.getLogger(__name__)

SCHEMA_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "experiment_config_schema.yml")

# 3.8+: TypedDict with the sections of experiment_config_schema.yml
ExperimentConfig = Dict[str, Any]

DEFAULT_CONFIG: ExperimentConfig = {
    "space": {"m": 5, "n": 1, "alpha": 1.0},
    "radii": {"r_min": 0.5, "r_max": 2.0, "per_decade": 64, "values": None},
    "quadrature": {
        "method": "reduced2d",
        "rel_tol": 1e-8,
        "node_factor": 1,
        "max_level": 5,
        "qmc_points": 2**18,
        "qmc_seed": 12345,
        "qmc_replicates": 8,
    },
    "identities": {
        "points": 1000,
        "seed": 1,
        "threshold": 1e-6,
        "spaces": [[5, 1, 1.0], [5, 1, 0.5], [3, 2, 1.0]],
        "fields": ["rho^4", "s^2*t^2", "1+s^2-t^2", "harmonic", "x1"],
    },
    "hardy": {
        "fields": ["1", "rho^2", "rho^4", "bump(1)", "s^2", "s^2*t^2", "1+s^2-t^2", "harmonic"],
        "radii": [0.5, 0.75, 1.0, 1.5, 2.0],
        "alphas": [0.5],
        "checks": [
            "hardy_x",
            "hardy_psi",
            "hardy_gauge",
            "rellich_1",
            "rellich_2",
            "grad_hardy",
            "weighted_hardy",
            "weighted_hardy_explicit",
        ],
    },
    "frequency": {"field": "rho^2", "r0": 1.0, "use_potential": False, "tolerance": 1e-2},
    "potential": {"c0": 0.0, "epsilon": None, "epsilon_cells": 2.0},
    "solver": {
        "s_max": 1.0,
        "t_max": 1.0,
        "grids": [65, 129, 257],
        "regularization": "smooth",
        "rho_min": 0.05,
        "boundary": "harmonic",
        "mms": True,
        "residual_target": 1e-10,
        "chain_frequency": False,
    },
    "output_dir": "results",
}


class ConfigInvalidException(LabException):
    """Exception raised for invalid config file."""

    def __init__(self, message: str):
        super().__init__("Configuration is invalid:\n " + message)


def _load_schema() -> Optional[Dict[str, Any]]:
    if not os.path.isfile(SCHEMA_FILE):
        _log.warning("Config schema description is missing (re-install recommended): %s", SCHEMA_FILE)
        return None
    with open(SCHEMA_FILE, "r") as schema_file:
        # We put JSON schema into YAML
        return cast(Dict[str, Any], yaml.safe_load(schema_file))


def parse_experiment_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Validate a config document and merge it over the defaults."""
    try:
        # JSON documents are valid YAML
        user_config = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalidException(f"'{source}' is not a valid JSON document\n Details: {exc}")
    if user_config is None:
        user_config = {}
    if not isinstance(user_config, dict):
        raise ConfigInvalidException(f"'{source}' should contain a JSON object")

    json_schema = _load_schema()
    try:
        if json_schema is not None:
            fastjsonschema.validate(json_schema, user_config)
    except fastjsonschema.JsonSchemaException as exc:
        raise ConfigInvalidException(
            f"incorrect format for '{source}', should match description in '{SCHEMA_FILE}'\n" + f" Details: {exc}"
        )
    config = recursive_update(copy.deepcopy(DEFAULT_CONFIG), user_config)
    # Fail early on values the schema can't express
    space_params(config)
    quadrature_settings(config)
    return config


def load_experiment_config(config_path: Optional[str]) -> ExperimentConfig:
    """Load the experiment config from a file, or the defaults when no file is given."""
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(config_path, "r") as config_file:
        text = config_file.read()
    return parse_experiment_config(text, config_path)


def _space(values: Dict[str, Any]) -> SpaceParams:
    try:
        return SpaceParams(int(values["m"]), int(values["n"]), float(values["alpha"]))
    except InputError as exc:
        raise ConfigInvalidException(f"space parameters: {exc}")


def space_params(config: ExperimentConfig) -> SpaceParams:
    return _space(config["space"])


def identity_spaces(config: ExperimentConfig) -> List[SpaceParams]:
    spaces = config["identities"]["spaces"]
    if not spaces:
        return [space_params(config)]
    return [_space({"m": m, "n": n, "alpha": alpha}) for m, n, alpha in spaces]


def hardy_spaces(config: ExperimentConfig) -> List[SpaceParams]:
    """The configured space followed by the extra alpha values."""
    base = config["space"]
    result = [space_params(config)]
    for alpha in config["hardy"]["alphas"]:
        if alpha != base["alpha"]:
            result.append(_space(dict(base, alpha=alpha)))
    return result


def quadrature_settings(config: ExperimentConfig, workers: int = 1) -> QuadratureSettings:
    try:
        return QuadratureSettings(workers=workers, **config["quadrature"])
    except InputError as exc:
        raise ConfigInvalidException(f"quadrature settings: {exc}")


def radii(config: ExperimentConfig) -> np.ndarray:
    section = config["radii"]
    if section.get("values"):
        values = np.array(sorted(set(section["values"])), dtype=float)
        return values
    return radius_grid(section["r_min"], section["r_max"], section["per_decade"])


def field_by_name(name: str, sp: SpaceParams) -> AnalyticField:
    fields = catalog(sp)
    if name not in fields:
        raise ConfigInvalidException(f"unknown field '{name}', expected one of: {', '.join(sorted(fields))}")
    return fields[name]


def solver_grids(config: ExperimentConfig) -> List[GridSpec]:
    section = config["solver"]
    return [GridSpec(section["s_max"], section["t_max"], n, n) for n in section["grids"]]


def potential(config: ExperimentConfig) -> Potential:
    """Potential of the config.

    A missing epsilon is `epsilon_cells` cells of the coarsest solver grid, so every grid of a refinement
    solves the same problem.
    """
    section = config["potential"]
    epsilon = section["epsilon"]
    if epsilon is None:
        epsilon = max(default_epsilon(grid, section["epsilon_cells"]) for grid in solver_grids(config))
    return Potential(float(section["c0"]), float(epsilon))
