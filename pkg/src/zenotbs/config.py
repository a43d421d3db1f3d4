"""Flat TOML run configuration: schema, validation, defaults and serialisation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import LatticeSpec, LinearRamp, MeasurementProgram, PulseTrain, PumpRamp

SCENARIOS = ("rabi", "zeno-two-level", "bands", "metric-map", "ze-tbs", "aze-tbs",
             "phase-diagram", "ramp-tunnel", "decompose")
PROFILES = ("none", "constant", "linear", "pulses", "projective")
INITIAL_STATES = ("right_tbs", "left_tbs", "site")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass(frozen=True)
class Key:
    kind: type
    default: Any
    help: str
    check: Optional[str] = None     # "pos", "nonneg" or "int>=N"
    choices: tuple = ()


def _k(kind, default, help, check=None, choices=()):
    return Key(kind, default, help, check, choices)


# One table drives parsing, validation, dumping and the README key list.
SCHEMA: Dict[str, Dict[str, Key]] = {
    "lattice": {
        "kind": _k(str, "aah", "lattice family", choices=("aah", "two_level")),
        "M": _k(int, 9, "number of waveguides", "int>=2"),
        "beta": _k(float, 35.0, "uniform propagation constant, 1/m"),
        "kappa0": _k(float, 10.0, "mean coupling, 1/m", "pos"),
        "kappa_m": _k(float, 5.0, "coupling modulation amplitude, 1/m", "nonneg"),
        "ell": _k(float, 1.0 / 3.0, "modulation wavenumber"),
        "phi_unit": _k(str, "turns", "unit of every phase", choices=("turns", "radians")),
    },
    "ramp": {
        "phi0": _k(float, 0.0, "phase at z = 0"),
        "dphi": _k(float, 0.0, "total phase change over the ramp"),
        "L": _k(float, 1.0, "ramp length, m", "pos"),
        "auto_length": _k(bool, False, "replace L by the Landau-Zener adiabatic length"),
        "initial": _k(str, "right_tbs", "launched state", choices=INITIAL_STATES),
        "initial_site": _k(int, 1, "site excited when initial = 'site'", "int>=1"),
    },
    "measurement": {
        "profile": _k(str, "none", "measurement schedule", choices=PROFILES),
        "site": _k(int, 1, "measured waveguide (1-based)", "int>=1"),
        "dbeta": _k(float, 0.0, "detuning (constant, pulse height or ramp end), 1/m"),
        "dbeta_start": _k(float, 0.0, "linear profile: detuning at z_start, 1/m"),
        "z_start": _k(float, 0.0, "linear profile: ramp start, m", "nonneg"),
        "z_end": _k(float, -1.0, "linear profile: ramp end, m; negative means L"),
        "pulses": _k(int, 1, "pulse or projection count", "int>=1"),
        "alpha": _k(float, 1.0, "pulse coverage n*Lm/span, in (0, 1]", "pos"),
    },
    "sweep": {
        "phi0_start": _k(float, 0.0, "first phase (phi0 axis, or phi for bands/metric-map)"),
        "phi0_stop": _k(float, 1.0, "last phase"),
        "phi0_num": _k(int, 21, "phase points", "int>=1"),
        "dphi_start": _k(float, -1.0, "first pumping range"),
        "dphi_stop": _k(float, 1.0, "last pumping range"),
        "dphi_num": _k(int, 21, "pumping-range points", "int>=1"),
        "dbeta_start": _k(float, 0.0, "first detuning, 1/m"),
        "dbeta_stop": _k(float, 0.0, "last detuning, 1/m"),
        "dbeta_num": _k(int, 1, "detuning points", "int>=1"),
        "band": _k(int, -1, "band index (0-based); -1 selects the right boundary state", "int>=-1"),
        "threshold": _k(float, 0.1, "|chi| threshold for ZE / AZE labels", "pos"),
        "z": _k(float, -1.0, "chi evaluation distance; negative means L"),
    },
    "numerics": {
        "steps": _k(int, 0, "propagation steps; 0 picks a safe default", "int>=0"),
        "threads": _k(int, 1, "sweep workers", "int>=1"),
        "cell": _k(int, 3, "edge cell size for zeta", "int>=1"),
        "track_points": _k(int, 101, "samples for band following in chi", "int>=2"),
        "min_overlap": _k(float, 0.9, "band tracking refinement threshold", "pos"),
        "target_leak": _k(float, 0.01, "Landau-Zener leak defining the adiabatic length", "pos"),
        "metric_form": _k(str, "difference", "metric evaluation", choices=("difference", "projector")),
        "samples": _k(int, 11, "decomposition sample count along z", "int>=2"),
    },
}

# Scenario-specific defaults, applied before the user's values.
SCENARIO_DEFAULTS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "rabi": {"lattice": {"kind": "two_level", "M": 2, "kappa0": 10.3, "kappa_m": 0.0},
             "ramp": {"L": math.pi / 10.3, "initial": "site"}},
    "zeno-two-level": {"lattice": {"kind": "two_level", "M": 2, "kappa0": 10.3, "kappa_m": 0.0},
                       "ramp": {"L": math.pi / (2 * 10.3), "initial": "site"},
                       "measurement": {"profile": "constant", "site": 2, "dbeta": 61.8}},
    "ze-tbs": {"ramp": {"phi0": 0.25, "dphi": -0.5, "auto_length": True}},
    "aze-tbs": {"ramp": {"phi0": -0.6, "dphi": 0.4, "auto_length": True},
                "measurement": {"site": 2}},
    "ramp-tunnel": {"ramp": {"phi0": -0.2, "dphi": 0.0, "L": 0.7},
                    "measurement": {"profile": "linear", "site": 1, "dbeta": 60.0}},
    "phase-diagram": {"measurement": {"site": 2},
                      "sweep": {"phi0_start": -1.0, "dbeta_start": 60.0, "dbeta_stop": 60.0}},
    "bands": {"sweep": {"phi0_start": -0.5, "phi0_stop": 0.5, "phi0_num": 201}},
    "metric-map": {"sweep": {"phi0_start": -0.5, "phi0_stop": 0.5, "phi0_num": 101}},
}


def _defaults(scenario: Optional[str]) -> Dict[str, Dict[str, Any]]:
    values = {sec: {k: spec.default for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    for sec, over in SCENARIO_DEFAULTS.get(scenario or "", {}).items():
        values[sec].update(over)
    return values


def _coerce(path: str, key: Key, raw):
    if key.kind is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected a boolean, got {type(raw).__name__}")
        return raw
    if key.kind is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected an integer, got {type(raw).__name__}")
        return raw
    if key.kind is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {type(raw).__name__}")
        if not math.isfinite(raw):
            raise ConfigError(f"{path}: must be finite")
        return float(raw)
    if not isinstance(raw, str):
        raise ConfigError(f"{path}: expected a string, got {type(raw).__name__}")
    return raw


def _check(path: str, key: Key, value) -> None:
    if key.choices and value not in key.choices:
        raise ConfigError(f"{path}: expected one of {list(key.choices)}, got {value!r}")
    c = key.check
    if c == "pos" and not value > 0:
        raise ConfigError(f"{path}: must be > 0, got {value!r}")
    if c == "nonneg" and not value >= 0:
        raise ConfigError(f"{path}: must be >= 0, got {value!r}")
    if c and c.startswith("int>="):
        lo = int(c[5:])
        if value < lo:
            raise ConfigError(f"{path}: must be >= {lo}, got {value!r}")


@dataclass
class RunConfig:
    """Validated configuration, every key filled in."""

    values: Dict[str, Dict[str, Any]]
    scenario: Optional[str] = None

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    # -- derived objects ---------------------------------------------------

    def lattice(self) -> LatticeSpec:
        return LatticeSpec(**self.values["lattice"])

    def ramp(self, L: Optional[float] = None) -> PumpRamp:
        r = self.values["ramp"]
        return PumpRamp(r["phi0"], r["dphi"], r["L"] if L is None else L)

    def program(self, L: Optional[float] = None) -> MeasurementProgram:
        m = self.values["measurement"]
        L = self.values["ramp"]["L"] if L is None else L
        profile = m["profile"]
        if profile in ("none", "projective") or (profile == "constant" and m["dbeta"] == 0.0):
            return MeasurementProgram()
        if profile == "constant":
            return MeasurementProgram.constant(m["site"], m["dbeta"])
        if profile == "linear":
            z_end = L if m["z_end"] < 0 else m["z_end"]
            return MeasurementProgram.single(m["site"], LinearRamp(m["dbeta_start"], m["dbeta"],
                                                                   m["z_start"], z_end))
        return MeasurementProgram.single(m["site"],
                                         PulseTrain.from_coverage(m["pulses"], m["alpha"], m["dbeta"], L))

    def grid(self, axis: str) -> np.ndarray:
        s = self.values["sweep"]
        return np.linspace(s[f"{axis}_start"], s[f"{axis}_stop"], s[f"{axis}_num"])

    @property
    def steps(self) -> Optional[int]:
        return self.values["numerics"]["steps"] or None

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return copy.deepcopy(self.values)

    def dumps(self) -> str:
        return dump_config(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of all values.

        ``numerics.threads`` is left out: it never changes results.
        """
        values = self.to_dict()
        del values["numerics"]["threads"]
        blob = json.dumps({"scenario": self.scenario, "values": values},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str, scenario: Optional[str] = None) -> RunConfig:
    """Parse flat TOML text into a validated :class:`RunConfig`."""
    if scenario is not None and scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown {scenario!r}; expected one of {list(SCENARIOS)}")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<file>: not valid TOML ({exc})") from None
    values = _defaults(scenario)
    given = set()
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section; expected one of {list(SCHEMA)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: must be a table")
        for key, val in body.items():
            path = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key")
            if isinstance(val, dict):
                raise ConfigError(f"{path}: nested tables are not allowed")
            values[section][key] = _coerce(path, SCHEMA[section][key], val)
            given.add(path)
    lat = values["lattice"]
    if lat["kind"] == "two_level":
        # aah-shaped defaults make no sense for two modes
        for key, two in (("M", 2), ("kappa_m", 0.0)):
            if f"lattice.{key}" not in given:
                lat[key] = two
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            _check(f"{section}.{key}", spec, values[section][key])
    cfg = RunConfig(values=values, scenario=scenario)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: RunConfig) -> None:
    def wrap(section, build):
        try:
            return build()
        except ValueError as exc:
            msg = str(exc)
            field = msg.split(":", 1)[0].strip()
            if field in SCHEMA[section]:
                raise ConfigError(f"{section}.{msg}") from None
            raise ConfigError(f"{section}: {msg}") from None

    spec = wrap("lattice", cfg.lattice)
    wrap("ramp", cfg.ramp)
    program = wrap("measurement", cfg.program)
    m = cfg["measurement"]
    if m["profile"] != "none" and not 1 <= m["site"] <= spec.M:
        raise ConfigError(f"measurement.site: index {m['site']} outside 1..{spec.M}")
    if m["alpha"] > 1:
        raise ConfigError(f"measurement.alpha: must be <= 1, got {m['alpha']!r}")
    if m["profile"] == "projective" and spec.kind != "two_level":
        raise ConfigError("measurement.profile: 'projective' needs lattice.kind = 'two_level'")
    if cfg["ramp"]["initial_site"] > spec.M:
        raise ConfigError(f"ramp.initial_site: index outside 1..{spec.M}")
    if cfg["sweep"]["band"] >= spec.M:
        raise ConfigError(f"sweep.band: index outside 0..{spec.M - 1}")
    if not cfg["numerics"]["min_overlap"] < 1:
        raise ConfigError("numerics.min_overlap: must be < 1")
    if not cfg["numerics"]["target_leak"] < 1:
        raise ConfigError("numerics.target_leak: must be < 1")
    del program


def load_config(path, scenario: Optional[str] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), scenario)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v)


def dump_config(cfg: RunConfig) -> str:
    """Render every key as flat TOML; ``parse_config`` of the result is lossless."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_toml_value(cfg.values[section][key])}")
        lines.append("")
    return "\n".join(lines)
