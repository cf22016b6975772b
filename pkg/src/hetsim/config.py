"""YAML run configuration: parsing, unit handling, validation, presets.

Keys carry explicit unit suffixes (_m, _s, _mps2, _vph, _mph); speeds given
in mph are converted to SI on load, everything else is SI already. Unknown
keys are rejected (typo protection) and all complaints are collected into a
single ConfigError so a bad file surfaces every problem at once.

Two presets ship with the package: "desk" (shortened arms and durations, for
interactive poking) and "paper" (full-scale campaign settings).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .experiments import Scenario
from .network import CloverleafGeometry
from .params import ParameterBounds, THETA_INDEX, THETA_NAMES, default_bounds
from .units import mph_to_mps

PRESET_NAMES = ("desk", "paper")

CAMPAIGN_KINDS = ("single", "het-sweep", "ofat", "sobol")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


# bound-table keys: config key -> (component name, value conversion)
_IDENT = float
BOUND_KEYS = {
    "v0_mph": ("v0", mph_to_mps),
    "T_s": ("T", _IDENT),
    "a_mps2": ("a", _IDENT),
    "b_mps2": ("b", _IDENT),
    "delta": ("delta", _IDENT),
    "s0_m": ("s0", _IDENT),
    "c": ("c", _IDENT),
    "p": ("p", _IDENT),
    "a_delta_mps2": ("a_delta", _IDENT),
    "a_bias_mps2": ("a_bias", _IDENT),
    "v_crit_mph": ("v_crit", mph_to_mps),
    "L_m": ("L", _IDENT),
    "v_max_mph": ("v_max", mph_to_mps),
}

_GEOMETRY_KEYS = ("arm_length_m", "lanes_per_direction", "ramp_length_m",
                  "loop_length_m", "weave_length_m", "separation_length_m")
_SCENARIO_KEYS = ("geometry", "dt_s", "duration_s", "ramp_duration_s", "demand_vph",
                  "ramp_from_vph", "ramp_to_vph", "turn_fractions", "mandatory_zone_m",
                  "lane_change_period_s", "lane_change_cooldown_s",
                  "flow_window_s", "merge_give_up_s", "lcps_per_vehicle", "b_safe_mps2")
_FLEET_KEYS = ("sigma", "theta_mean")
_CAMPAIGN_KEYS = {
    "single": ("kind", "sigma", "profile", "seed"),
    "het-sweep": ("kind", "sigmas", "n_means", "n_reps", "master_seed"),
    "ofat": ("kind", "factors", "sigma_max", "n_points", "n_reps", "master_seed"),
    "sobol": ("kind", "mode", "n", "sigma_max", "mean_sigma", "pin", "factors",
              "second_order", "n_reps", "master_seed", "n_bootstrap"),
}


@dataclass
class Config:
    scenario: Scenario = field(default_factory=Scenario)
    bounds: ParameterBounds = field(default_factory=default_bounds)
    fleet_sigma: float = 0.2
    fleet_mean: Optional[np.ndarray] = None     # None = mid-range
    campaign: dict = field(default_factory=lambda: {"kind": "single"})


def _check_unknown(section: dict, allowed, where: str, errors: list):
    for key in section:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


def _parse_geometry(raw: dict, errors: list) -> CloverleafGeometry:
    _check_unknown(raw, _GEOMETRY_KEYS, "scenario.geometry", errors)
    clean = {}
    for key in _GEOMETRY_KEYS:
        if key not in raw:
            continue
        val = raw[key]
        cast = int if key == "lanes_per_direction" else float
        try:
            clean[key] = cast(val)
        except (TypeError, ValueError):
            kind = "an integer" if cast is int else "a number"
            errors.append(f"scenario.geometry.{key}: expected {kind}, got {val!r}")
    try:
        return CloverleafGeometry(**clean)
    except ValueError as err:
        errors.append(str(err))
        return CloverleafGeometry()


def _parse_scenario(raw: dict, errors: list) -> Scenario:
    _check_unknown(raw, _SCENARIO_KEYS, "scenario", errors)
    geometry = _parse_geometry(raw.get("geometry", {}) or {}, errors)
    kwargs = {"geometry": geometry}
    rename = {"dt_s": "dt", "demand_vph": "inflow_vph", "b_safe_mps2": "b_safe"}
    for key in _SCENARIO_KEYS:
        if key == "geometry" or key not in raw:
            continue
        dest = rename.get(key, key)
        val = raw[key]
        if key == "turn_fractions":
            if not isinstance(val, (list, tuple)) or len(val) != 3:
                errors.append(f"scenario.turn_fractions: expected a list of 3 numbers, got {val!r}")
                continue
            kwargs[dest] = tuple(float(v) for v in val)
        elif key == "lcps_per_vehicle":
            if not isinstance(val, bool):
                errors.append(f"scenario.lcps_per_vehicle: expected a boolean, got {val!r}")
                continue
            kwargs[dest] = val
        else:
            try:
                kwargs[dest] = float(val)
            except (TypeError, ValueError):
                errors.append(f"scenario.{key}: expected a number, got {val!r}")
    try:
        return Scenario(**kwargs)
    except ValueError as err:
        errors.append(f"scenario: {err}")
        return Scenario(geometry=geometry)


def _parse_bounds(raw: dict, errors: list) -> ParameterBounds:
    bounds = default_bounds()
    _check_unknown(raw, BOUND_KEYS, "bounds", errors)
    for key, val in raw.items():
        if key not in BOUND_KEYS:
            continue
        name, convert = BOUND_KEYS[key]
        try:
            if isinstance(val, (list, tuple)):
                if len(val) != 2:
                    raise ValueError(f"expected [low, high] or a scalar, got {val!r}")
                lo, hi = convert(val[0]), convert(val[1])
            else:
                lo = hi = convert(val)
            bounds = bounds.with_component(name, lo, hi)
        except (TypeError, ValueError) as err:
            errors.append(f"bounds.{key}: {err}")
    return bounds


def _parse_fleet(raw: dict, bounds: ParameterBounds, errors: list):
    _check_unknown(raw, _FLEET_KEYS, "fleet", errors)
    sigma = 0.2
    if "sigma" in raw:
        try:
            sigma = float(raw["sigma"])
            if sigma < 0.0:
                errors.append(f"fleet.sigma: must be non-negative, got {sigma}")
        except (TypeError, ValueError):
            errors.append(f"fleet.sigma: expected a number, got {raw['sigma']!r}")
    mean = None
    spec = raw.get("theta_mean")
    if spec is not None and spec != "mid":
        if not isinstance(spec, dict):
            errors.append(f"fleet.theta_mean: expected 'mid' or a mapping, got {spec!r}")
        else:
            mean = bounds.midpoint.copy()
            _check_unknown(spec, BOUND_KEYS, "fleet.theta_mean", errors)
            for key, val in spec.items():
                if key not in BOUND_KEYS:
                    continue
                name, convert = BOUND_KEYS[key]
                try:
                    mean[THETA_INDEX[name]] = convert(val)
                except (TypeError, ValueError):
                    errors.append(f"fleet.theta_mean.{key}: expected a number, got {val!r}")
            low, high = bounds.lower, bounds.upper
            bad = [THETA_NAMES[i] for i in np.flatnonzero((mean < low) | (mean > high))]
            if bad:
                errors.append(f"fleet.theta_mean: outside bounds for: {', '.join(bad)}")
    return sigma, mean


def _parse_campaign(raw: dict, errors: list) -> dict:
    kind = raw.get("kind", "single")
    if kind not in CAMPAIGN_KINDS:
        errors.append(f"campaign.kind: expected one of {', '.join(CAMPAIGN_KINDS)}, got {kind!r}")
        return {"kind": "single"}
    _check_unknown(raw, _CAMPAIGN_KEYS[kind], f"campaign ({kind})", errors)
    out = {"kind": kind}
    ints = {"n_means", "n_reps", "n_points", "n", "seed", "master_seed", "n_bootstrap"}
    floats = {"sigma", "sigma_max", "mean_sigma"}
    for key, val in raw.items():
        if key == "kind" or key not in _CAMPAIGN_KEYS[kind]:
            continue
        try:
            if key in ints:
                out[key] = int(val)
            elif key in floats:
                out[key] = float(val)
            elif key == "sigmas":
                out[key] = tuple(float(v) for v in val)
            elif key in ("factors", "pin"):
                vals = tuple(str(v) for v in val)
                unknown = [v for v in vals if v not in THETA_INDEX]
                if unknown:
                    raise ValueError(f"unknown factor names: {', '.join(unknown)}")
                out[key] = vals
            elif key == "second_order":
                if not isinstance(val, bool):
                    raise ValueError(f"expected a boolean, got {val!r}")
                out[key] = val
            elif key == "mode":
                if val not in ("het", "mean"):
                    raise ValueError(f"expected 'het' or 'mean', got {val!r}")
                out[key] = val
            elif key == "profile":
                if val not in ("constant", "ramp"):
                    raise ValueError(f"expected 'constant' or 'ramp', got {val!r}")
                out[key] = val
            else:
                out[key] = val
        except (TypeError, ValueError) as err:
            errors.append(f"campaign.{key}: {err}")
    return out


def validate_config(raw: dict) -> Config:
    """Turn a parsed YAML mapping into a Config; raises ConfigError on problems."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"top level must be a mapping, got {type(raw).__name__}"])
    errors: list[str] = []
    _check_unknown(raw, ("scenario", "bounds", "fleet", "campaign"), "top level", errors)
    scenario = _parse_scenario(raw.get("scenario", {}) or {}, errors)
    bounds = _parse_bounds(raw.get("bounds", {}) or {}, errors)
    sigma, mean = _parse_fleet(raw.get("fleet", {}) or {}, bounds, errors)
    campaign = _parse_campaign(raw.get("campaign", {}) or {}, errors)
    if errors:
        raise ConfigError(errors)
    return Config(scenario=scenario, bounds=bounds, fleet_sigma=sigma,
                  fleet_mean=mean, campaign=campaign)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return data if data is not None else {}


def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r} (available: {', '.join(PRESET_NAMES)})")
    ref = resources.files("hetsim").joinpath(f"presets/{name}.yaml")
    data = yaml.safe_load(ref.read_text())
    return data if data is not None else {}


def load_config(path=None, preset: Optional[str] = None) -> Config:
    """Load and validate a config: preset (if given) overlaid by the file."""
    raw: dict = {}
    if preset is not None:
        raw = load_preset(preset)
    if path is not None:
        raw = _deep_merge(raw, load_yaml(path))
    return validate_config(raw)
