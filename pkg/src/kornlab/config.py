"""Experiment configuration: schema validation, normalization, hashing."""

from __future__ import annotations

import hashlib
import json

import jsonschema

from .errors import ConfigurationError

TASKS = ("korn-constant", "killing", "counterexample", "lemmas",
         "poincare", "trace", "sweep")
SWEEPABLE = ("korn-constant", "counterexample", "poincare", "trace")

_EXPR_SCHEMA = {
    "oneOf": [
        {"type": "object", "properties": {"const": {"type": "number"}},
         "required": ["const"], "additionalProperties": False},
        {"type": "object", "properties": {
            "cos": {"type": "object", "properties": {
                "amp": {"type": "number"},
                "mode": {"type": "integer", "minimum": 0},
                "param": {"enum": ["theta", "phi", "psi"]},
                "base": {"type": "number"}},
                "required": ["amp", "param", "base"],
                "additionalProperties": False}},
         "required": ["cos"], "additionalProperties": False},
    ]
}

_SURFACE_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["circle", "ellipse", "torus", "bumpy-torus",
                          "sphere"]},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "b": {"type": "number", "exclusiveMinimum": 0},
        "major_radius": {"type": "number", "exclusiveMinimum": 0},
        "minor_radius": {"type": "number", "exclusiveMinimum": 0},
        "bump_amplitude": {"type": "number", "minimum": 0,
                           "exclusiveMaximum": 1},
        "bump_mode": {"type": "integer", "minimum": 1},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_PROFILE_SCHEMA = {
    "type": "object",
    "properties": {
        "g1": _EXPR_SCHEMA,
        "g2": _EXPR_SCHEMA,
        "regime": {"enum": ["H1", "H2"]},
        "h_correction": {"type": "array", "items": {"type": "number"},
                         "minItems": 2, "maxItems": 2},
    },
    "required": ["g1", "g2"],
    "additionalProperties": False,
}

_RESOLUTION_SCHEMA = {
    "type": "object",
    "properties": {
        "n1": {"type": "integer", "minimum": 8},
        "n2": {"type": "integer", "minimum": 8},
        "nt": {"type": "integer", "minimum": 8},
    },
    "required": ["n1"],
    "additionalProperties": False,
}

_SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "tangency": {"enum": ["none", "plus", "minus", "both"]},
        "orthogonality": {"enum": ["none", "rigid", "killing",
                                   "killing-profile"]},
        "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "task": {"enum": list(TASKS)},
        "surface": _SURFACE_SCHEMA,
        "profile": _PROFILE_SCHEMA,
        "h": {"type": "number", "exclusiveMinimum": 0},
        "h_list": {"type": "array",
                   "items": {"type": "number", "exclusiveMinimum": 0},
                   "minItems": 1},
        "resolution": _RESOLUTION_SCHEMA,
        "scenario": _SCENARIO_SCHEMA,
        "field": {"enum": ["extend", "trivial"]},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0},
                  "minItems": 1},
        "sweep_task": {"enum": list(SWEEPABLE)},
        "mollifier_radius": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["task", "surface"],
    "additionalProperties": False,
}

_TASK_REQUIREMENTS = {
    "korn-constant": ("profile", "h", "resolution", "scenario"),
    "killing": ("resolution",),
    "counterexample": ("profile", "h_list", "resolution"),
    "lemmas": ("profile", "resolution", "scenario", "seeds"),
    "poincare": ("profile", "h", "resolution"),
    "trace": ("profile", "h", "resolution"),
    "sweep": ("sweep_task", "profile", "h_list", "resolution"),
}


def validate_config(cfg):
    """Schema-validate a raw config dict; returns the dict unchanged.

    Raises ConfigurationError naming the offending key or value.
    """
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {path}: {exc.message}") \
            from exc
    task = cfg["task"]
    for key in _TASK_REQUIREMENTS[task]:
        if key not in cfg:
            raise ConfigurationError(
                f"task {task!r} requires config key {key!r}")
    if task == "lemmas" and "h" not in cfg and "h_list" not in cfg:
        raise ConfigurationError("task 'lemmas' requires 'h' or 'h_list'")
    if task == "sweep" and cfg["sweep_task"] == "korn-constant" \
            and "scenario" not in cfg:
        raise ConfigurationError(
            "sweeping korn-constant requires a 'scenario' block")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return validate_config(cfg)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg, exclude=()):
    trimmed = {k: v for k, v in cfg.items() if k not in exclude}
    return hashlib.sha256(canonical_json(trimmed).encode()).hexdigest()[:16]


def resolution_tuple(cfg, with_nt):
    res = cfg["resolution"]
    dims = [res["n1"]]
    if "n2" in res:
        dims.append(res["n2"])
    if with_nt:
        if "nt" not in res:
            raise ConfigurationError(
                "shell tasks need 'nt' in the resolution block")
        dims.append(res["nt"])
    return tuple(dims)
