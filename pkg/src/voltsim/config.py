"""Run configuration read from INI files.

A config file has up to five sections, all optional::

    [system]
    cores = 4
    channels = 2
    banks = 8
    read_queue = 64
    write_queue = 64
    window = 192
    interval_cycles = 4000000
    address_map = RoBaRaCoCh

    [timing]
    source = table          ; or "model"
    params = circuit.json   ; CircuitParams fields, model source only
    table = table.csv       ; a latency-table CSV overriding the source

    [power]
    file = power.ini        ; [power] keys in another file
    cpu_active_w = 2.2      ; inline overrides win over the file

    [policy]
    name = voltron
    target_loss = 5.0

    [run]
    seed = 0
    out_dir = out
    traces = core0.trace core1.trace

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

from .circuit import CircuitParams
from .errors import ConfigError, VoltsimError
from .memsim.system import SystemConfig
from .power import PowerConfig
from .timing import LatencyTable, build_latency_table, read_table_csv
from .voltron import POLICIES

_SYSTEM_KEYS = {
    "cores": int, "channels": int, "ranks": int, "banks": int, "rows": int,
    "columns": int, "read_queue": int, "write_queue": int, "window": int,
    "interval_cycles": int, "address_map": str, "drain_high": int, "drain_low": int,
    "issue_width": int, "refresh": "bool",
}


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    timing_source: str = "table"
    circuit_params: Optional[str] = None
    table_path: Optional[str] = None
    power_path: Optional[str] = None
    power: PowerConfig = field(default_factory=PowerConfig)
    policy: str = "fixed"
    target_loss: float = 5.0
    seed: int = 0
    out_dir: str = "."
    traces: Tuple[str, ...] = ()

    def validate(self) -> "RunConfig":
        if self.timing_source not in ("table", "model"):
            raise ConfigError(f"timing source must be 'table' or 'model', not "
                              f"{self.timing_source!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if not self.target_loss >= 0:
            raise ConfigError("target_loss must be >= 0")
        if self.system.interval_cycles <= 0:
            raise ConfigError("interval_cycles must be positive")
        for path in (self.circuit_params, self.table_path, self.power_path, *self.traces):
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"file not found: {path}")
        return self

    def circuit(self) -> CircuitParams:
        if self.circuit_params is None:
            return CircuitParams()
        with open(self.circuit_params) as fh:
            data = json.load(fh)
        try:
            return CircuitParams(**data)
        except (TypeError, VoltsimError) as exc:
            raise ConfigError(f"bad circuit parameters in {self.circuit_params}: {exc}")

    def latency_table(self) -> LatencyTable:
        if self.table_path is not None:
            with open(self.table_path, newline="") as fh:
                return read_table_csv(fh)
        return build_latency_table(self.timing_source, params=self.circuit())


def _convert(section, key, kind):
    try:
        if kind == "bool":
            return section.getboolean(key)
        return kind(section[key])
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {section[key]!r}")


def _power_from(parser, base: PowerConfig, name: str) -> PowerConfig:
    if not parser.has_section("power"):
        return base
    sec = parser["power"]
    types = {f.name: f.type for f in fields(PowerConfig)}
    updates = {}
    for key in sec:
        if key == "file":
            continue
        if key not in types:
            raise ConfigError(f"{name}: unknown power key {key!r}")
        updates[key] = _convert(sec, key, int if types[key] in (int, "int") else float)
    try:
        return replace(base, **updates)
    except VoltsimError as exc:
        raise ConfigError(f"{name}: {exc}")


def _read(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}")
    return parser


def load_config(path: str) -> RunConfig:
    """Parse and validate an INI run configuration.

    Raises
    ------
    ConfigError
        For missing files, unknown keys, unparsable values or failed
        validation.
    """
    parser = _read(path)
    here = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(here, p)

    known = {"system", "timing", "power", "policy", "run"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")

    system = SystemConfig()
    if parser.has_section("system"):
        sec = parser["system"]
        updates = {}
        for key in sec:
            if key not in _SYSTEM_KEYS:
                raise ConfigError(f"unknown system key {key!r}")
            updates[key] = _convert(sec, key, _SYSTEM_KEYS[key])
        try:
            system = replace(system, **updates)
        except VoltsimError as exc:
            raise ConfigError(str(exc))

    kw = {}
    if parser.has_section("timing"):
        sec = parser["timing"]
        kw["timing_source"] = sec.get("source", "table").strip()
        if "params" in sec:
            kw["circuit_params"] = resolve(sec["params"])
        if "table" in sec:
            kw["table_path"] = resolve(sec["table"])

    power = PowerConfig()
    if parser.has_section("power") and "file" in parser["power"]:
        ppath = resolve(parser["power"]["file"])
        kw["power_path"] = ppath
        if not os.path.isfile(ppath):
            raise ConfigError(f"file not found: {ppath}")
        power = _power_from(_read(ppath), power, ppath)
    power = _power_from(parser, power, path)

    if parser.has_section("policy"):
        sec = parser["policy"]
        kw["policy"] = sec.get("name", "fixed").strip()
        if "target_loss" in sec:
            kw["target_loss"] = _convert(sec, "target_loss", float)
    if parser.has_section("run"):
        sec = parser["run"]
        if "seed" in sec:
            kw["seed"] = _convert(sec, "seed", int)
        if "out_dir" in sec:
            kw["out_dir"] = resolve(sec["out_dir"])
        if "traces" in sec:
            kw["traces"] = tuple(resolve(t) for t in sec["traces"].split())
    return RunConfig(system=system, power=power, **kw).validate()
