"""
Experiment configuration: JSON schema, validation and object construction.

A config is one JSON document with a ``mode`` and the plant, switch and
channel blocks. Capacity may be the string ``"inf"``. Validation errors
are raised as :class:`~rqloop.errors.ConfigError` naming the offending
field in dotted form (``switch.p``, ``plant.A``...).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Any

import jsonschema
import numpy as np

from .analysis import DEFAULT_EPSILON, ChannelModel
from .errors import ConfigError
from .lqr import ScalarPlant, VectorPlant
from .switching import SwitchModel

MODES = ("bounds_sweep", "variance_curve", "trajectory", "ensemble", "lyapunov", "riccati")
PRESETS = ("bernoulli-stable", "bernoulli-unstable", "markov-stable", "markov-unstable")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_capacity = {"oneOf": [_pos, {"const": "inf"}]}
_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _num}}
_vector = {"type": "array", "minItems": 1, "items": _num}

SCALAR_PLANT = {
    "type": "object",
    "properties": {
        "alpha": _num, "b": _num, "sigma_w2": _nonneg, "sigma_0_2": _nonneg,
        "q_cost": _pos, "r_cost": _pos, "closed_gain": _num,
    },
    "required": ["alpha"],
    "additionalProperties": False,
}

VECTOR_PLANT = {
    "type": "object",
    "properties": {k: _matrix for k in ("A", "B", "W", "P0", "Q", "R")},
    "required": ["A", "B", "W", "P0", "Q", "R"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "mode": {"enum": list(MODES)},
        "plant": {"if": {"type": "object", "required": ["A"]}, "then": VECTOR_PLANT, "else": SCALAR_PLANT},
        "switch": {
            "type": "object",
            "properties": {"kind": {"enum": ["bernoulli", "markov"]}, "p": _prob, "q": _prob,
                           "pi0": {"oneOf": [_prob, {"type": "null"}]}},
            "required": ["kind", "p"],
            "if": {"properties": {"kind": {"const": "markov"}}},
            "then": {"required": ["kind", "p", "q"]},
            "additionalProperties": False,
        },
        "channel": {
            "type": "object",
            "properties": {"capacity_bits": _capacity, "epsilon": _pos},
            "additionalProperties": False,
        },
        "horizon": {"type": "integer", "minimum": 1},
        "runs": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string", "minLength": 1},
        "gain": {"oneOf": [_num, _matrix]},
        "x0": {"oneOf": [_num, _vector]},
        "gamma_path": {"type": "array", "items": {"enum": [0, 1]}},
        "divergence_threshold": _pos,
        "overflow": {"enum": ["extend", "clamp"]},
        "ci_z": _pos,
        "sweep": {
            "type": "object",
            "properties": {
                "capacity_bits": {"type": "array", "minItems": 1, "items": _capacity},
                "alpha": {"type": "array", "minItems": 1, "items": _num},
                "closed_gain": {"type": "array", "minItems": 1, "items": _num},
                "bound": {"enum": ["bernoulli", "markov"]},
            },
            "required": ["capacity_bits"],
            "additionalProperties": False,
        },
        "lyapunov": {
            "type": "object",
            "properties": {"method": {"enum": ["linear_system", "fixed_point"]}},
            "additionalProperties": False,
        },
    },
    "required": ["mode", "plant"],
    "additionalProperties": False,
}

_num_or_tag = {"oneOf": [_num, {"enum": ["inf", "-inf", "nan"]}, {"type": "null"}]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "tool": {"const": "rqloop"},
        "version": {"type": "string"},
        "schema_version": {"const": 1},
        "mode": {"enum": list(MODES)},
        "timestamp": {"type": "string"},
        "seed": {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "null"}]},
        "rng": {"type": "string"},
        "config": CONFIG_SCHEMA,
        "stability": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "required": ["stable"], "properties": {"stable": {"type": "boolean"}}},
            ]
        },
        "theory": {"type": "object", "properties": {"asymptote": _num_or_tag}},
        "results": {"type": "object"},
        "outputs": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "report": {"type": "string"}},
            "required": ["csv", "report"],
        },
    },
    "required": ["tool", "version", "schema_version", "mode", "timestamp", "seed", "config",
                 "stability", "theory", "results", "outputs"],
}


def _field(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        return f"{path}.{missing}" if path else missing
    if err.validator == "additionalProperties" and "'" in err.message:
        extra = err.message.split("'")[1]
        return f"{path}.{extra}" if path else extra
    return path or "<root>"


def validate_config(doc: Any) -> None:
    """Raise :class:`ConfigError` for the most relevant schema violation."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    err = jsonschema.exceptions.best_match(v.iter_errors(doc))
    if err is not None:
        raise ConfigError(_field(err), err.message)


def validate_report(doc: Any) -> None:
    jsonschema.Draft202012Validator(REPORT_SCHEMA).validate(doc)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("rqloop").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def load_config(source: str) -> dict:
    """Read a JSON config from a path, or a bundled preset via ``preset:<name>``."""
    if source.startswith("preset:"):
        return load_preset(source.split(":", 1)[1])
    with open(source, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from exc


# -- construction ------------------------------------------------------------


def capacity(value) -> float:
    return math.inf if value == "inf" else float(value)


def build_channel(doc: dict) -> ChannelModel:
    ch = doc.get("channel", {})
    return ChannelModel(capacity(ch.get("capacity_bits", "inf")), float(ch.get("epsilon", DEFAULT_EPSILON)))


def build_switch(doc: dict) -> SwitchModel:
    if "switch" not in doc:
        raise ConfigError("switch", f"mode {doc['mode']!r} needs a switch block")
    s = doc["switch"]
    if s["kind"] == "bernoulli":
        return SwitchModel.bernoulli(s["p"])
    if s["p"] + s["q"] == 0:
        raise ConfigError("switch.q", "p and q cannot both be 0")
    return SwitchModel.markov(s["p"], s["q"], s.get("pi0"))


def is_vector(doc: dict) -> bool:
    return "A" in doc["plant"]


def build_scalar_plant(pl: dict, alpha: float | None = None, closed_gain: float | None = None) -> ScalarPlant:
    kw = {k: pl[k] for k in ("b", "sigma_w2", "sigma_0_2") if k in pl}
    if closed_gain is not None:
        kw["closed_gain"] = closed_gain
    else:
        for k in ("q_cost", "r_cost", "closed_gain"):
            if k in pl:
                kw[k] = pl[k]
    try:
        return ScalarPlant(pl["alpha"] if alpha is None else alpha, **kw)
    except ValueError as exc:
        raise ConfigError("plant", str(exc)) from exc


def build_vector_plant(pl: dict) -> VectorPlant:
    try:
        return VectorPlant(*(np.array(pl[k], dtype=float) for k in ("A", "B", "W", "P0", "Q", "R")))
    except ValueError as exc:
        raise ConfigError("plant", str(exc)) from exc


def build_plant(doc: dict) -> ScalarPlant | VectorPlant:
    return build_vector_plant(doc["plant"]) if is_vector(doc) else build_scalar_plant(doc["plant"])


@dataclass
class Overrides:
    seed: int | None = None
    runs: int | None = None
    horizon: int | None = None
    threads: int | None = None
    out: str | None = None


def apply_overrides(doc: dict, ov: Overrides) -> dict:
    """Command-line flags take precedence over the config document."""
    doc = dict(doc)
    for k in ("seed", "runs", "horizon", "threads", "out"):
        v = getattr(ov, k)
        if v is not None:
            doc[k] = v
    return doc
