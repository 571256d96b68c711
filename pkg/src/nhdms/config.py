"""Run configuration: JSON schema, defaults and shipped presets.

Lengths in the geometry block are in units of ``scaling.length_scale``
(nanometres by default); frequencies are in units of the plasma frequency.
Extension parameters are given as multiples of the damping constant.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .macro import IncidentWave
from .mesh import ArrayGeometry, Box, Sphere
from .model import HOST_PRESETS, NondimScheme, ScaledMaterials, nondimensionalize, preset_materials

PIPELINES = ("reference", "extended", "homogenize", "original-multiscale", "modified-multiscale",
             "extension-study", "alpha-study", "full")

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["geometry", "materials", "wave", "numerics", "pipeline"],
    "properties": {
        "name": {"type": "string"},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["inclusion", "counts", "eta"],
            "properties": {
                "cell_lengths": _VEC3,
                "inclusion": {
                    "oneOf": [
                        {"type": "object", "additionalProperties": False,
                         "required": ["type", "center", "radius"],
                         "properties": {"type": {"const": "sphere"}, "center": _VEC3, "radius": _POS}},
                        {"type": "object", "additionalProperties": False,
                         "required": ["type", "lo", "hi"],
                         "properties": {"type": {"const": "box"}, "lo": _VEC3, "hi": _VEC3}},
                    ]
                },
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 1},
                           "minItems": 3, "maxItems": 3},
                "eta": _POS,
                "padding": {"type": "number", "minimum": 0},
            },
        },
        "materials": {
            "type": "object",
            "additionalProperties": False,
            "required": ["preset"],
            "properties": {
                "preset": {"type": "string"},
                "overrides": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _POS for k in ("omega_p", "gamma", "beta", "eps_metal", "mu_metal",
                                                     "eps_host", "mu_host")},
                },
            },
        },
        "scaling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"length_scale": _POS, "wave_factor": {"type": ["number", "null"]}},
        },
        "wave": {
            "type": "object",
            "additionalProperties": False,
            "required": ["omegas"],
            "properties": {"direction": _VEC3, "polarization": _VEC3,
                           "omegas": {"type": "array", "items": _POS, "minItems": 1}},
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cell_resolution"],
            "properties": {
                "cell_resolution": {"type": "integer", "minimum": 1},
                "coarsen": {"type": "integer", "minimum": 1},
                "lambda_over_gamma": _POS,
                "lambdas_over_gamma": {"type": "array", "items": _POS},
                "residual_tol": _POS,
                "reference": {"type": "boolean"},
            },
        },
        "pipeline": {"enum": list(PIPELINES)},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv", "vtk", "dof"]}},
            },
        },
    },
}

DEFAULTS = {
    "geometry": {"cell_lengths": [1.0, 1.0, 1.0], "padding": 0.0},
    "materials": {"overrides": {}},
    "scaling": {"length_scale": 1e-9, "wave_factor": None},
    "wave": {"direction": [0.0, 1.0, 0.0], "polarization": [1.0, 0.0, 0.0]},
    "numerics": {"coarsen": 1, "lambda_over_gamma": 1000.0,
                 "lambdas_over_gamma": [10.0, 100.0, 1000.0, 10000.0],
                 "residual_tol": 1e-10, "reference": True},
    "output": {"directory": "out", "formats": ["json", "csv", "vtk", "dof"]},
}


class ConfigError(ValueError):
    pass


def validate(cfg: dict) -> dict:
    """Check a raw config against the schema and fill defaults.

    Raises:
        ConfigError: On schema violations (including unknown keys) or an
            unknown material preset.
    """
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    if cfg["materials"]["preset"] not in HOST_PRESETS:
        raise ConfigError(f"unknown material preset {cfg['materials']['preset']!r}")
    out = copy.deepcopy(cfg)
    for block, defaults in DEFAULTS.items():
        out.setdefault(block, {})
        for key, value in defaults.items():
            out[block].setdefault(key, copy.deepcopy(value))
    return out


def load(path) -> dict:
    """Read, validate and default-fill a JSON config file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate(raw)


def preset(name: str) -> dict:
    """A shipped config (``case_5_1`` or ``case_5_2``)."""
    try:
        text = resources.files("nhdms").joinpath("presets", f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"no shipped preset named {name!r}") from None
    return validate(json.loads(text))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def build_geometry(cfg: dict) -> ArrayGeometry:
    g = cfg["geometry"]
    inc = g["inclusion"]
    if inc["type"] == "sphere":
        inclusion = Sphere(tuple(inc["center"]), float(inc["radius"]))
    else:
        inclusion = Box(tuple(inc["lo"]), tuple(inc["hi"]))
    return ArrayGeometry(inclusion=inclusion, counts=tuple(g["counts"]), eta=float(g["eta"]),
                         cell_lengths=tuple(g["cell_lengths"]), padding=float(g["padding"]))


def build_materials(cfg: dict) -> ScaledMaterials:
    m = cfg["materials"]
    s = cfg["scaling"]
    phys = preset_materials(m["preset"], **m["overrides"])
    return nondimensionalize(phys, NondimScheme(length_scale=s["length_scale"]),
                             wave_factor=s["wave_factor"])


def build_waves(cfg: dict) -> list:
    w = cfg["wave"]
    return [IncidentWave(float(om), tuple(w["direction"]), tuple(w["polarization"]))
            for om in w["omegas"]]
