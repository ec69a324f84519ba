"""TOML scenario files: schema validation and conversion to run specs.

Angles in files are degrees (keys ending in ``_deg``); everything else is SI.
Every section is optional; a missing key keeps the library default.

```toml
[vehicle]            # m, inertia = [Ixx, Iyy, Izz], l, e, k_f, k_m, g
[configuration]      # name, omega_max, angle_limit_deg
[controller]         # kind = "smc" | "pid"
[controller.gains]   # smc: lam, k, sigma; pid: k_p, k_d, k_i, integral_limit
[maneuver]           # name = "m1" .. "m4" | "hover"
[uncertainty]        # enabled, mass_scale, ..., servo_rate_limit_deg_s, disturbance
[sim]                # duration, dt, log_rate, seed
[compare]            # configs, controllers, e_values
[uif]                # uncertainties = ["random-disturbance", ...]
[uif.thresholds]     # rms_factor, settle_factor, position_floor, attitude_floor_deg, ...
```
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from omnirotor.configuration import DEFAULT_ANGLE_LIMIT, ConfigId, VehicleParams
from omnirotor.controllers import PidGains, SmcGains
from omnirotor.dynamics import OMEGA_MAX, UncertaintySpec
from omnirotor.metrics import UNCERTAINTY_CASES, TrackingThresholds
from omnirotor.scenarios import ManeuverId, ScenarioSpec

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_SEED = 42


class SchemaError(ValueError):
    """A scenario file violates the schema; ``key`` is the dotted path of the first offender."""

    def __init__(self, key: str, reason: str):
        self.key = key
        super().__init__(f"{key}: {reason}")


_NUMBER = "number"
_VEC = "list of numbers"
_STR = "string"
_BOOL = "boolean"
_INT = "integer"
_STRS = "list of strings"

SCHEMA = {
    "vehicle": {"m": _NUMBER, "inertia": _VEC, "l": _NUMBER, "e": _NUMBER,
                "k_f": _NUMBER, "k_m": _NUMBER, "g": _NUMBER},
    "configuration": {"name": _STR, "omega_max": _NUMBER, "angle_limit_deg": _NUMBER},
    "controller": {"kind": _STR, "gains": dict},
    "controller.gains": {"lam": _VEC, "k": _VEC, "sigma": _VEC, "k_p": _VEC, "k_d": _VEC,
                         "k_i": _VEC, "integral_limit": _VEC},
    "maneuver": {"name": _STR},
    "uncertainty": {"enabled": _BOOL, "mass_scale": _NUMBER, "inertia_scale": _NUMBER,
                    "aero_scale": _NUMBER, "ecc_scale": _NUMBER, "bldc_time_constant": _NUMBER,
                    "servo_time_constant": _NUMBER, "servo_rate_limit_deg_s": _NUMBER,
                    "servo_error_pct": _VEC, "bldc_error_pct": _VEC, "disturbance": _STR,
                    "disturbance_range": _VEC, "constant_disturbance": _VEC,
                    "disturbance_rate": _NUMBER, "rotor_inertia": _NUMBER,
                    "controller_e": _NUMBER},
    "sim": {"duration": _NUMBER, "dt": _NUMBER, "log_rate": _NUMBER, "seed": _INT},
    "compare": {"configs": _STRS, "controllers": _STRS, "e_values": _VEC},
    "uif": {"uncertainties": _STRS, "thresholds": dict},
    "uif.thresholds": {"rms_factor": _NUMBER, "settle_factor": _NUMBER,
                       "position_floor": _NUMBER, "attitude_floor_deg": _NUMBER,
                       "settle_band": _NUMBER, "settle_floor": _NUMBER},
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_type(key: str, value, kind) -> None:
    ok = {
        _NUMBER: lambda v: _is_number(v) and math.isfinite(v),
        _VEC: lambda v: isinstance(v, list) and all(_is_number(x) for x in v),
        _STR: lambda v: isinstance(v, str),
        _BOOL: lambda v: isinstance(v, bool),
        _INT: lambda v: isinstance(v, int) and not isinstance(v, bool),
        _STRS: lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
        dict: lambda v: isinstance(v, dict),
    }[kind](value)
    if not ok:
        expected = "table" if kind is dict else kind
        raise SchemaError(key, f"expected {expected}, got {type(value).__name__} {value!r}")


def validate(doc: dict) -> None:
    """Raise :class:`SchemaError` naming the first unknown or mistyped key."""
    for section, body in doc.items():
        if section not in SCHEMA or "." in section:
            raise SchemaError(section, "unknown section; expected one of "
                              + ", ".join(s for s in SCHEMA if "." not in s))
        _check_type(section, body, dict)
        _validate_table(section, body)


def _validate_table(path: str, body: dict) -> None:
    allowed = SCHEMA[path]
    for key, value in body.items():
        dotted = f"{path}.{key}"
        if key not in allowed:
            raise SchemaError(dotted, "unknown key; expected one of " + ", ".join(allowed))
        _check_type(dotted, value, allowed[key])
        if allowed[key] is dict:
            _validate_table(dotted, value)


@dataclass
class ScenarioFile:
    """Parsed scenario file with everything converted to library objects."""

    spec: ScenarioSpec
    compare_configs: list = field(default_factory=lambda: ["hedral", "tilt", "tilt-hedral"])
    compare_controllers: list = field(default_factory=lambda: ["smc", "pid"])
    compare_e_values: list = field(default_factory=lambda: [0.0, 0.05])
    uif_uncertainties: list = field(default_factory=list)
    thresholds: TrackingThresholds = field(default_factory=TrackingThresholds)
    seed_from_file: bool = False
    raw: dict = field(default_factory=dict)


def _build(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise SchemaError(path, str(exc)) from exc


def _gains(kind: str, body: dict):
    if not body:
        return None
    if kind == "smc":
        extra = set(body) - {"lam", "k", "sigma"}
        if extra:
            raise SchemaError(f"controller.gains.{sorted(extra)[0]}", "not an SMC gain")
        defaults = SmcGains()
        return _build("controller.gains", SmcGains,
                      body.get("lam", defaults.lam), body.get("k", defaults.k),
                      body.get("sigma", defaults.sigma))
    extra = set(body) - {"k_p", "k_d", "k_i", "integral_limit"}
    if extra:
        raise SchemaError(f"controller.gains.{sorted(extra)[0]}", "not a PID gain")
    missing = [k for k in ("k_p", "k_d", "k_i") if k not in body]
    if missing:
        raise SchemaError(f"controller.gains.{missing[0]}", "required when PID gains are given")
    return _build("controller.gains", PidGains, body["k_p"], body["k_d"], body["k_i"],
                  body.get("integral_limit", [2.0] * 6))


def _uncertainty(body: dict) -> Optional[UncertaintySpec]:
    if not body or not body.get("enabled", True):
        return None
    kwargs = {}
    for key, value in body.items():
        if key == "enabled":
            continue
        if key == "servo_rate_limit_deg_s":
            kwargs["servo_rate_limit"] = math.radians(value)
        elif isinstance(value, list):
            if len(value) != 2:
                raise SchemaError(f"uncertainty.{key}", "expected two values")
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = value
    return _build("uncertainty", UncertaintySpec, **kwargs)


def parse(doc: dict) -> ScenarioFile:
    validate(doc)
    vehicle = dict(doc.get("vehicle", {}))
    if "inertia" in vehicle:
        vehicle["inertia"] = tuple(vehicle["inertia"])
    params = _build("vehicle", VehicleParams, **vehicle)

    conf = doc.get("configuration", {})
    config = _build("configuration.name", ConfigId.parse, conf.get("name", "hedral"))
    angle_limit = math.radians(conf["angle_limit_deg"]) if "angle_limit_deg" in conf else DEFAULT_ANGLE_LIMIT
    if not 0 < angle_limit < math.pi / 2:
        raise SchemaError("configuration.angle_limit_deg", "must lie in (0, 90)")

    ctrl = doc.get("controller", {})
    kind = ctrl.get("kind", "smc").lower()
    if kind not in ("smc", "pid"):
        raise SchemaError("controller.kind", f"expected 'smc' or 'pid', got {kind!r}")
    gains = _gains(kind, ctrl.get("gains", {}))

    maneuver = _build("maneuver.name", ManeuverId.parse, doc.get("maneuver", {}).get("name", "m1"))
    sim = doc.get("sim", {})
    spec = _build(
        "sim",
        ScenarioSpec,
        config=config,
        controller=kind,
        maneuver=maneuver,
        gains=gains,
        params=params,
        uncertainty=_uncertainty(doc.get("uncertainty", {})),
        duration=sim.get("duration", 30.0),
        dt=sim.get("dt", 1e-3),
        log_rate=sim.get("log_rate", 200.0),
        seed=sim.get("seed", DEFAULT_SEED),
        omega_max=conf.get("omega_max", OMEGA_MAX),
        angle_limit=angle_limit,
    )
    out = ScenarioFile(spec=spec, seed_from_file="seed" in sim, raw=doc)

    compare = doc.get("compare", {})
    for key in ("configs", "controllers", "e_values"):
        if key in compare:
            setattr(out, f"compare_{key}", list(compare[key]))
    for i, name in enumerate(out.compare_configs):
        _build(f"compare.configs[{i}]", ConfigId.parse, name)
    for i, name in enumerate(out.compare_controllers):
        if name.lower() not in ("smc", "pid"):
            raise SchemaError(f"compare.controllers[{i}]", f"expected 'smc' or 'pid', got {name!r}")

    uif = doc.get("uif", {})
    names = list(uif.get("uncertainties", []))
    for i, name in enumerate(names):
        if name.strip().lower().replace("_", "-") not in UNCERTAINTY_CASES:
            raise SchemaError(f"uif.uncertainties[{i}]", "unknown uncertainty; expected one of "
                              + ", ".join(UNCERTAINTY_CASES))
    out.uif_uncertainties = names
    th = dict(uif.get("thresholds", {}))
    if "attitude_floor_deg" in th:
        th["attitude_floor"] = math.radians(th.pop("attitude_floor_deg"))
    out.thresholds = _build("uif.thresholds", TrackingThresholds, **th)
    return out


def load(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(str(path), f"cannot read file ({exc.strerror})") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(str(path), f"not valid TOML ({exc})") from exc
    return parse(doc)


def parse_text(text: str) -> ScenarioFile:
    return parse(tomllib.loads(text))


def to_jsonable(value: Any) -> Any:
    """Recursively convert library values to JSON-friendly ones."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, np.integer):
        return int(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value
