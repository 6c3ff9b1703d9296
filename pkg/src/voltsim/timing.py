"""DRAM timing sets, guardbanding and voltage operating points."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .circuit import CircuitParams, RawLatencies, derive_min_latencies
from .errors import InvalidParameterError, NoSuchOperatingPointError

V_NOMINAL = 1.35
T_CK_NOMINAL = 1.25
GUARDBAND = 1.375
T_CL_NS = 13.75
T_CWL_NS = 13.75

# channel rate (MT/s) -> clock period (ns)
CLOCK_PERIODS = {1600: 1.25, 1333: 1.5, 1066: 1.875}

# (v_array, tRCD, tRP, tRAS) in ns, guardbanded and rounded to 1.25 ns
PUBLISHED_TABLE = (
    (1.35, 13.75, 13.75, 36.25),
    (1.30, 13.75, 13.75, 36.25),
    (1.25, 13.75, 15.00, 36.25),
    (1.20, 13.75, 15.00, 37.50),
    (1.15, 15.00, 15.00, 37.50),
    (1.10, 15.00, 16.25, 40.00),
    (1.05, 16.25, 17.50, 41.25),
    (1.00, 17.50, 18.75, 45.00),
    (0.95, 18.75, 21.25, 48.75),
    (0.90, 21.25, 26.25, 52.50),
)

DEFAULT_VOLTAGES = tuple(row[0] for row in PUBLISHED_TABLE)

_EPS = 1e-9


def ns_to_cycles(ns: float, t_ck: float) -> int:
    """Smallest whole number of clock cycles covering ``ns``."""
    return max(0, math.ceil(ns / t_ck - _EPS))


def guardband_cycles(raw_ns: float, guardband_factor: float, t_ck: float) -> int:
    if guardband_factor < 1:
        raise InvalidParameterError("guardband factor must be >= 1")
    if t_ck <= 0:
        raise InvalidParameterError("t_ck must be positive")
    if raw_ns < 0:
        raise InvalidParameterError("latency must be non-negative")
    return ns_to_cycles(raw_ns * guardband_factor, t_ck)


@dataclass(frozen=True)
class TimingParams:
    """One DRAM timing set, stored as whole clock cycles.

    Nanosecond values are derived as ``cycles * t_ck`` so they are always
    exact multiples of the clock period.
    """

    rcd: int
    rp: int
    ras: int
    cl: int
    cwl: int
    t_ck: float = T_CK_NOMINAL

    def __post_init__(self):
        if self.t_ck <= 0:
            raise InvalidParameterError("t_ck must be positive")
        for name in ("rcd", "rp", "ras", "cl", "cwl"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise InvalidParameterError(f"{name} must be a positive integer cycle count")
        if self.ras <= self.rcd:
            raise InvalidParameterError("tRAS must exceed tRCD")

    @classmethod
    def from_ns(cls, t_rcd, t_rp, t_ras, t_cl=T_CL_NS, t_cwl=T_CWL_NS, t_ck=T_CK_NOMINAL):
        """Build from nanoseconds, rounding each value up to whole cycles."""
        return cls(ns_to_cycles(t_rcd, t_ck), ns_to_cycles(t_rp, t_ck),
                   ns_to_cycles(t_ras, t_ck), ns_to_cycles(t_cl, t_ck),
                   ns_to_cycles(t_cwl, t_ck), t_ck)

    @property
    def t_rcd(self) -> float:
        return self.rcd * self.t_ck

    @property
    def t_rp(self) -> float:
        return self.rp * self.t_ck

    @property
    def t_ras(self) -> float:
        return self.ras * self.t_ck

    @property
    def t_cl(self) -> float:
        return self.cl * self.t_ck

    @property
    def t_cwl(self) -> float:
        return self.cwl * self.t_ck

    @property
    def latency(self) -> float:
        """tRAS + tRP, the latency input of the loss predictor."""
        return self.t_ras + self.t_rp

    def at_clock(self, t_ck: float) -> "TimingParams":
        """Same nanosecond requirements re-expressed at another clock period."""
        return TimingParams.from_ns(self.t_rcd, self.t_rp, self.t_ras,
                                    self.t_cl, self.t_cwl, t_ck)


@dataclass(frozen=True)
class VoltageOperatingPoint:
    v_array: float
    timings: TimingParams
    channel_rate: int = 1600
    v_peripheral: float = V_NOMINAL

    def __post_init__(self):
        if not 0.90 - _EPS <= self.v_array <= V_NOMINAL + _EPS:
            raise InvalidParameterError(f"v_array {self.v_array} outside [0.90, 1.35]")
        if self.channel_rate not in CLOCK_PERIODS:
            raise InvalidParameterError(f"unsupported channel rate {self.channel_rate}")
        if abs(self.timings.t_ck - CLOCK_PERIODS[self.channel_rate]) > _EPS:
            raise InvalidParameterError("timing clock does not match channel rate")

    @property
    def t_ck(self) -> float:
        return self.timings.t_ck


def apply_guardband(raw: RawLatencies, guardband_factor: float = GUARDBAND,
                    t_ck: float = T_CK_NOMINAL, t_cl: float = T_CL_NS,
                    t_cwl: float = T_CWL_NS) -> TimingParams:
    """Scale raw latencies by the guardband and round up to whole cycles.

    tCL and tCWL are copied through unchanged (rounded to cycles only).
    """
    return TimingParams(
        guardband_cycles(raw.t_rcd_raw, guardband_factor, t_ck),
        guardband_cycles(raw.t_rp_raw, guardband_factor, t_ck),
        guardband_cycles(raw.t_ras_raw, guardband_factor, t_ck),
        ns_to_cycles(t_cl, t_ck),
        ns_to_cycles(t_cwl, t_ck),
        t_ck,
    )


@dataclass(frozen=True)
class LatencyTable:
    rows: tuple = field(default_factory=tuple)

    def __post_init__(self):
        volts = [r.v_array for r in self.rows]
        if len(set(volts)) != len(volts):
            raise InvalidParameterError("duplicate voltages in latency table")
        if len(volts) > 1:
            inc = all(a < b for a, b in zip(volts, volts[1:]))
            dec = all(a > b for a, b in zip(volts, volts[1:]))
            if not (inc or dec):
                raise InvalidParameterError("latency table voltages must be sorted")
        by_v = sorted(self.rows, key=lambda r: r.v_array)
        for lo, hi in zip(by_v, by_v[1:]):
            a, b = lo.timings, hi.timings
            if b.t_rcd > a.t_rcd or b.t_rp > a.t_rp or b.t_ras > a.t_ras:
                raise InvalidParameterError(
                    "timings must not grow as voltage increases")

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    @property
    def voltages(self):
        return tuple(r.v_array for r in self.rows)

    def lookup(self, v: float) -> VoltageOperatingPoint:
        return lookup(self, v)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_table_csv(self, fh)


def lookup(table: LatencyTable, v: float) -> VoltageOperatingPoint:
    """Exact-match lookup; there is no interpolation between rows."""
    for row in table.rows:
        if abs(row.v_array - v) <= 1e-9:
            return row
    raise NoSuchOperatingPointError(f"no operating point at {v} V")


def published_table() -> LatencyTable:
    rows = tuple(
        VoltageOperatingPoint(v, TimingParams.from_ns(rcd, rp, ras))
        for v, rcd, rp, ras in PUBLISHED_TABLE
    )
    return LatencyTable(rows)


def build_latency_table(source="table", voltages: Sequence[float] = DEFAULT_VOLTAGES,
                        params: CircuitParams | None = None,
                        guardband_factor: float = GUARDBAND,
                        t_ck: float = T_CK_NOMINAL) -> LatencyTable:
    """Build a latency table from the published rows or from the circuit model.

    ``source`` is ``"table"`` or ``"model"``. In model mode each voltage goes
    through :func:`derive_min_latencies` then :func:`apply_guardband`.
    """
    if source == "table":
        full = published_table()
        return LatencyTable(tuple(lookup(full, v) for v in voltages))
    if source != "model":
        raise InvalidParameterError(f"unknown latency source {source!r}")
    params = params or CircuitParams()
    rows = []
    for v in voltages:
        raw = derive_min_latencies(params, v)
        rows.append(VoltageOperatingPoint(v, apply_guardband(raw, guardband_factor, t_ck)))
    return LatencyTable(tuple(rows))


TABLE_HEADER = ["v_array", "trcd_ns", "trp_ns", "tras_ns", "trcd_cyc", "trp_cyc", "tras_cyc"]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def write_table_csv(table: LatencyTable, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for row in table.rows:
        t = row.timings
        w.writerow([_fmt(row.v_array), _fmt(t.t_rcd), _fmt(t.t_rp), _fmt(t.t_ras),
                    t.rcd, t.rp, t.ras])


def read_table_csv(fh, t_ck: float = T_CK_NOMINAL) -> LatencyTable:
    rows = []
    for rec in csv.DictReader(fh):
        rows.append(VoltageOperatingPoint(
            float(rec["v_array"]),
            TimingParams(int(rec["trcd_cyc"]), int(rec["trp_cyc"]), int(rec["tras_cyc"]),
                         ns_to_cycles(T_CL_NS, t_ck), ns_to_cycles(T_CWL_NS, t_ck), t_ck)))
    return LatencyTable(tuple(rows))


def memdvfs_point(table: LatencyTable, channel_rate: int, voltage: float) -> VoltageOperatingPoint:
    """Whole-chip DVFS step: array and peripheral share ``voltage``.

    Array latencies keep their nanosecond requirement for that voltage and
    are re-rounded to the slower clock.
    """
    base = lookup(table, voltage).timings
    return VoltageOperatingPoint(voltage, base.at_clock(CLOCK_PERIODS[channel_rate]),
                                 channel_rate, voltage)


def iter_rows(table: LatencyTable) -> Iterable[tuple]:
    for row in table.rows:
        t = row.timings
        yield row.v_array, t.t_rcd, t.t_rp, t.t_ras
