"""Run configuration: a JSON document with nested blocks, validated by schema."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .diagnostics import HEATING_VARIANTS, Physics
from .grid import Grid
from .scenarios import SCENARIOS
from .solver import PICARD_FLOWS, SCHEMES, SolverConfig
from .thermo import Equilibrium

OUT_DIR_ENV = "HCPE_OUT_DIR"

DEFAULTS = {
    "grid": {"nx": 32, "ny": 32, "nz": 33, "dealias": False},
    "physics": {
        "rho_bar_star": 1.0,
        "theta_star": 1.0,
        "mu": 0.1,
        "mu_prime": 0.1,
        "viscous_heating": "full",
        "heat_source": None,
    },
    "initial": {"scenario": "theta-bump", "eps": 1e-3, "seed": 0},
    "solver": {"scheme": "eulerian-imex", "dt": 1e-3, "t_end": 0.1, "picard_tol": 1e-8, "picard_max_iters": 10,
               "picard_flow": "refreeze"},
    "output": {"directory": "out", "every": 10, "dumps": ["rho_bar", "v", "theta"]},
}

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "ny": {"type": "integer", "minimum": 4, "multipleOf": 2},
                "nz": {"type": "integer", "minimum": 3},
                "dealias": {"type": "boolean"},
            },
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho_bar_star": _pos,
                "theta_star": _pos,
                "mu": _nonneg,
                "mu_prime": _nonneg,
                "viscous_heating": {"enum": list(HEATING_VARIANTS)},
                "heat_source": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["amplitude"],
                            "properties": {
                                "amplitude": {"type": "number"},
                                "kx": {"type": "integer", "minimum": 0},
                                "kz": {"type": "integer", "minimum": 0},
                            },
                        },
                    ]
                },
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scenario": {"enum": sorted(SCENARIOS)},
                "eps": _nonneg,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": list(SCHEMES)},
                "dt": _pos,
                "t_end": _nonneg,
                "picard_tol": _pos,
                "picard_max_iters": {"type": "integer", "minimum": 1},
                "picard_flow": {"enum": list(PICARD_FLOWS)},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "every": {"type": "integer", "minimum": 1},
                "dumps": {
                    "type": "array",
                    "uniqueItems": True,
                    "items": {"enum": ["rho_bar", "v", "theta"]},
                },
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the line or field at fault."""


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _field_path(error):
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def validate(document, source="<config>"):
    """Validate a decoded document; returns it merged over :data:`DEFAULTS`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: {_field_path(e)}: {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))
    return _merge(DEFAULTS, document)


def parse(text, source="<config>"):
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return validate(document, source)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse(text, str(path))


def heat_source_function(source):
    """``Q = amplitude cos(2 pi kx x) cos(pi kz z)``, constant in time."""
    if source is None:
        return None
    amp, kx, kz = source["amplitude"], source.get("kx", 1), source.get("kz", 1)

    def q(grid):
        x, _, z = grid.mesh
        field = amp * np.cos(2 * np.pi * kx * x) * np.cos(np.pi * kz * z)
        return lambda t: field

    return q


@dataclass
class RunConfig:
    """A validated configuration with typed accessors."""

    data: dict

    @property
    def grid(self):
        gb = self.data["grid"]
        return Grid(gb["nx"], gb["ny"], gb["nz"], gb["dealias"])

    def physics(self, grid):
        pb = self.data["physics"]
        q = heat_source_function(pb["heat_source"])
        return Physics(pb["mu"], pb["mu_prime"], pb["viscous_heating"], q(grid) if q else None)

    def equilibrium(self, beta_scale=1.0):
        pb = self.data["physics"]
        return Equilibrium.create(pb["rho_bar_star"], pb["theta_star"], self.data["grid"]["nz"], beta_scale)

    def solver(self, grid):
        sb = self.data["solver"]
        return SolverConfig(
            dt=sb["dt"],
            t_end=sb["t_end"],
            scheme=sb["scheme"],
            picard_tol=sb["picard_tol"],
            picard_max_iters=sb["picard_max_iters"],
            picard_flow=sb["picard_flow"],
            physics=self.physics(grid),
            output_every=self.data["output"]["every"],
        )

    @property
    def initial(self):
        return self.data["initial"]

    def output_directory(self, override=None):
        """``--out`` beats the environment variable, which beats the config file."""
        return Path(override or os.environ.get(OUT_DIR_ENV) or self.data["output"]["directory"])

    def replace(self, section, key, value):
        data = copy.deepcopy(self.data)
        data[section][key] = value
        return RunConfig(data)


def from_path(path):
    return RunConfig(load(path))


def default():
    return RunConfig(copy.deepcopy(DEFAULTS))
