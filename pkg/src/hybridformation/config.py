"""Scenario configuration files (YAML)."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .exceptions import ConfigError
from .partition import PartitionSpec
from .scenarios import CircleLeader, FollowerConfig, ScenarioConfig, StaticLeader

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "required": ["partition"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "partition": {
            "type": "object",
            "required": ["radius_m", "n_r", "n_theta", "n_phi"],
            "additionalProperties": False,
            "properties": {
                "radius_m": {"type": "number", "exclusiveMinimum": 0},
                "n_r": {"type": "integer", "minimum": 3},
                "n_theta": {"type": "integer", "minimum": 3},
                "n_phi": {"type": "integer", "minimum": 3},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "step_s": {"type": "number", "exclusiveMinimum": 0},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
            },
        },
        "leader": {
            "type": "object",
            "required": ["model"],
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["static", "circle"]},
                "position": _VEC,
                "diameter_m": {"type": "number", "exclusiveMinimum": 0},
                "altitude_m": _NUM,
                "period_s": {"type": "number", "exclusiveMinimum": 0},
                "center": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "phase": _NUM,
            },
        },
        "followers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["initial_offset", "desired_offset"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "initial_offset": _VEC,
                    "desired_offset": _VEC,
                    "v_max": {"type": "number", "minimum": 0},
                },
            },
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eligible_set_mode": {"enum": ["derived", "paper"]},
                "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "v_max": {"type": "number", "minimum": 0},
                "perturbation": {
                    "type": ["object", "null"],
                    "required": ["t_s"],
                    "additionalProperties": False,
                    "properties": {"t_s": _NUM, "dx": _VEC, "magnitude_m": _NUM},
                },
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "regions": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                       "minItems": 3, "maxItems": 3}},
                "samples": {"type": "integer", "minimum": 0},
            },
        },
    },
}

BUNDLED = ("reaching", "collision", "keeping", "multi_follower", "multi_follower_n6", "des_small")


def _key_path(err) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        return f"{path}.{missing}" if path else missing
    if err.validator == "additionalProperties":
        extra = err.message.split("'")[1]
        return f"{path}.{extra}" if path else extra
    return path or "<root>"


def resolve(path_or_name) -> Path:
    """A config path, or the bundled config of that name."""
    p = Path(path_or_name)
    if p.exists():
        return p
    if str(path_or_name) in BUNDLED:
        return Path(str(resources.files("hybridformation") / "configs" / f"{path_or_name}.yaml"))
    raise ConfigError(f"config: no such file or bundled config {str(path_or_name)!r}")


def load_raw(path_or_name) -> dict:
    p = resolve(path_or_name)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"config: YAML parse error in {p}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{_key_path(err)}: {err.message}") from err
    return data


def partition_of(data: dict) -> PartitionSpec:
    p = data["partition"]
    return PartitionSpec(float(p["radius_m"]), p["n_r"], p["n_theta"], p["n_phi"])


def v_max_of(data: dict) -> float:
    opts = data.get("options") or {}
    if "v_max" in opts:
        return float(opts["v_max"])
    fol = data.get("followers") or []
    return float(fol[0].get("v_max", 5.0)) if fol else 5.0


def scenario_of(data: dict) -> ScenarioConfig:
    if "leader" not in data:
        raise ConfigError("leader: required for run")
    if not data.get("followers"):
        raise ConfigError("followers: at least one follower is required for run")
    lead = data["leader"]
    if lead["model"] == "static":
        leader = StaticLeader(tuple(lead.get("position", (0.0, 0.0, 0.0))))
    else:
        for key in ("diameter_m", "altitude_m", "period_s"):
            if key not in lead:
                raise ConfigError(f"leader.{key}: required for the circle model")
        leader = CircleLeader(lead["diameter_m"], lead["altitude_m"], lead["period_s"],
                              tuple(lead.get("center", (0.0, 0.0))), lead.get("phase", 0.0))
    followers = [FollowerConfig(tuple(f["initial_offset"]), tuple(f["desired_offset"]),
                                float(f.get("v_max", 5.0)), f.get("name", f"follower_{n}"))
                 for n, f in enumerate(data["followers"])]
    sim = data.get("sim") or {}
    opts = data.get("options") or {}
    cfg = ScenarioConfig(partition_of(data), leader, followers,
                         step_s=float(sim.get("step_s", 0.01)),
                         duration_s=float(sim.get("duration_s", 60.0)),
                         seed=int(sim.get("seed", 0)),
                         mode=opts.get("eligible_set_mode", "derived"),
                         kappa=float(opts.get("kappa", 0.8)),
                         perturbation=opts.get("perturbation"))
    try:
        cfg.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return cfg


def load_scenario(path_or_name) -> ScenarioConfig:
    return scenario_of(load_raw(path_or_name))
