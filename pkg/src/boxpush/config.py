"""Run configuration: defaults, validation, YAML load/save.

One config dict fully determines one mission run (the reproducibility
unit).  Physical quantities carry units in their key names.  Unknown keys
are rejected by name so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import copy
import math

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_GOAL_45_1M = [math.cos(math.radians(45.0)), math.sin(math.radians(45.0))]

DEFAULTS: dict = {
    "seed": 0,
    "terrain": {
        "kind": "flat",   # flat | uphill | downhill
        "incline_deg": 5.0,
        "mu_static": 0.9,
        "mu_dynamic": 0.1,
    },
    "box": {
        "length_m": 1.35,
        "width_m": 0.35,
        "mass_kg": 2.0,
        "x_m": 0.0,
        "y_m": 0.0,
        "theta_rad": 0.0,
    },
    "robots": {
        "count": 6,
        "radius_m": 0.105,
        "contact_placement_m": 0.175,
    },
    "controller": {
        "kind": "r2p2",   # r2p2 | vlf
        "k_rot": 0.125,
        "k_trans": 0.3,
        "v_min_mps": 0.15,
        "v_max_box_mps": 0.2,
        "eps_primitive_rad": 0.2,
        "support_sign": "combined",
        "heading_error_mode": "shortest_arc",
        "vlf": {
            "v_translate_mps": 0.15,
            "heading_gain": 2.0,
            "nav_pos_tol_m": 0.05,
        },
    },
    "mission": {
        "waypoints_m": [_GOAL_45_1M],
        "goal_tolerance_m": 0.2,
        "waypoint_tolerance_m": 0.15,
        "max_time_s": 1500.0,
        "control_dt_s": 0.05,
        "reposition_mode": "maneuver",  # maneuver | teleport
        "teleport_penalty_s": 5.0,
    },
}

# keys that are legal but have no default (absent means "derived")
_OPTIONAL: dict[str, set] = {"terrain": {"downhill_dir"}}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base and key not in _OPTIONAL.get(path, set()):
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _positive(cfg: dict, section: str, key: str) -> None:
    if not cfg[section][key] > 0:
        raise ConfigError(f"{section}.{key} must be positive")


def validate(cfg: dict) -> dict:
    if not isinstance(cfg.get("seed"), int):
        raise ConfigError("seed must be an integer")

    terr = cfg["terrain"]
    if terr["kind"] not in ("flat", "uphill", "downhill"):
        raise ConfigError("terrain.kind must be flat, uphill, or downhill")
    if terr["incline_deg"] < 0:
        raise ConfigError("terrain.incline_deg must be non-negative")
    if not (0.0 <= terr["mu_dynamic"] <= terr["mu_static"]):
        raise ConfigError(
            "terrain.mu_dynamic must lie in [0, terrain.mu_static]"
        )

    _positive(cfg, "box", "mass_kg")
    _positive(cfg, "box", "length_m")
    _positive(cfg, "box", "width_m")
    if cfg["box"]["length_m"] < cfg["box"]["width_m"]:
        raise ConfigError("box.length_m must be >= box.width_m")

    rob = cfg["robots"]
    _positive(cfg, "robots", "radius_m")
    if rob["count"] not in (4, 6):
        raise ConfigError("robots.count must be 4 or 6")
    if not (0.0 < rob["contact_placement_m"] < cfg["box"]["length_m"] / 2.0):
        raise ConfigError(
            "robots.contact_placement_m must lie in (0, box.length_m / 2)"
        )

    ctl = cfg["controller"]
    if ctl["kind"] not in ("r2p2", "vlf"):
        raise ConfigError("controller.kind must be r2p2 or vlf")
    for key in ("k_rot", "k_trans", "v_min_mps", "v_max_box_mps",
                "eps_primitive_rad"):
        _positive(cfg, "controller", key)
    if ctl["support_sign"] not in ("combined", "split"):
        raise ConfigError("controller.support_sign must be combined or split")
    if ctl["heading_error_mode"] not in ("shortest_arc",
                                         "magnitude_difference"):
        raise ConfigError(
            "controller.heading_error_mode must be shortest_arc or "
            "magnitude_difference"
        )

    mis = cfg["mission"]
    if not mis["waypoints_m"]:
        raise ConfigError("mission.waypoints_m needs at least one waypoint")
    for i, pt in enumerate(mis["waypoints_m"]):
        if len(pt) != 2:
            raise ConfigError(f"mission.waypoints_m[{i}] must be [x, y]")
    _positive(cfg, "mission", "goal_tolerance_m")
    _positive(cfg, "mission", "waypoint_tolerance_m")
    _positive(cfg, "mission", "control_dt_s")
    if mis["max_time_s"] < 0:
        raise ConfigError("mission.max_time_s must be non-negative")
    if mis["reposition_mode"] not in ("maneuver", "teleport"):
        raise ConfigError(
            "mission.reposition_mode must be maneuver or teleport"
        )
    return cfg


def make_config(overrides: dict | None = None) -> dict:
    """Defaults deep-merged with overrides, validated. Unknown keys raise."""
    return validate(_merge(DEFAULTS, overrides or {}))


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"top level of {path} must be a mapping")
    return make_config(data)


def save_config(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True, default_flow_style=False)
