"""DRAM and CPU energy accounting.

DRAM energy is split into an array part, which scales with the square of
the array voltage, and a peripheral part, which follows the peripheral
voltage and (for static power) the channel frequency. The CPU is a
constant-power model: each core burns ``cpu_active_w`` until its trace
finishes and ``cpu_idle_w`` afterwards.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import AccountingError, InvalidParameterError

FREQUENCIES = (1600, 1333, 1066)


@dataclass(frozen=True)
class PowerConfig:
    """Per-command energies (nJ, whole rank), static powers (mW per device), CPU W.

    Defaults were tuned so that a saturating four-core memory-bound run at
    nominal voltage spends about 53% of system energy in DRAM and a
    compute-bound run spends about 80% in the CPU.
    """

    e_act_pre: float = 14.6
    e_rd_array: float = 4.86
    e_wr_array: float = 5.47
    e_ref: float = 133.6
    e_rd_io: float = 6.07
    e_wr_io: float = 7.29
    p_static_array: float = 44.0
    p_static_peri: float = 44.0
    devices_per_channel: int = 8
    channels: int = 2
    cpu_active_w: float = 2.2
    cpu_idle_w: float = 0.4
    v_nominal: float = 1.35
    f_nominal: int = 1600

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, (int, float)) and value < 0:
                raise InvalidParameterError(f"{name} must be non-negative")
        if self.v_nominal <= 0:
            raise InvalidParameterError("v_nominal must be positive")

    @property
    def devices(self) -> int:
        return self.devices_per_channel * self.channels


def scale_array_energy(e_nominal: float, v_array: float, cfg: PowerConfig = None) -> float:
    """Array energy at ``v_array``: quadratic in voltage."""
    cfg = cfg or PowerConfig()
    if not v_array > 0:
        raise InvalidParameterError("v_array must be positive")
    return e_nominal * (v_array / cfg.v_nominal) ** 2


def scale_peripheral_power(p_nominal: float, v: float, freq_mts: int,
                           cfg: PowerConfig = None) -> float:
    """Peripheral power at voltage ``v`` and channel rate ``freq_mts``."""
    cfg = cfg or PowerConfig()
    if freq_mts not in FREQUENCIES:
        raise InvalidParameterError(f"unsupported channel rate {freq_mts}")
    if not v > 0:
        raise InvalidParameterError("voltage must be positive")
    return p_nominal * (v / cfg.v_nominal) ** 2 * (freq_mts / cfg.f_nominal)


@dataclass(frozen=True)
class Segment:
    """A stretch of simulated time run at one operating point."""

    start_ps: int
    end_ps: int
    op_point: object
    counts: dict
    core_active_ps: int
    n_cores: int


@dataclass(frozen=True)
class EnergyReport:
    dram_array_dynamic: float
    dram_peripheral_dynamic: float
    dram_array_static: float
    dram_peripheral_static: float
    cpu: float
    runtime_s: float
    instructions: int = 0

    @property
    def dram_dynamic(self) -> float:
        return self.dram_array_dynamic + self.dram_peripheral_dynamic

    @property
    def dram_static(self) -> float:
        return self.dram_array_static + self.dram_peripheral_static

    @property
    def dram(self) -> float:
        return self.dram_dynamic + self.dram_static

    @property
    def total(self) -> float:
        return self.dram + self.cpu

    def power(self, energy: float) -> float:
        return energy / self.runtime_s if self.runtime_s > 0 else 0.0

    @property
    def dram_power(self) -> float:
        return self.power(self.dram)

    @property
    def system_power(self) -> float:
        return self.power(self.total)

    @property
    def perf_per_watt(self) -> float:
        """Instructions per joule (throughput per watt)."""
        return self.instructions / self.total if self.total > 0 else 0.0

    def components(self):
        return [
            ("dram_array_dynamic", self.dram_array_dynamic),
            ("dram_peripheral_dynamic", self.dram_peripheral_dynamic),
            ("dram_array_static", self.dram_array_static),
            ("dram_peripheral_static", self.dram_peripheral_static),
            ("cpu", self.cpu),
            ("dram_total", self.dram),
            ("system_total", self.total),
        ]

    def as_dict(self) -> dict:
        out = {name: e for name, e in self.components()}
        out.update(runtime_s=self.runtime_s, instructions=self.instructions,
                   dram_power_w=self.dram_power, system_power_w=self.system_power,
                   perf_per_watt=self.perf_per_watt)
        return out

    def to_json(self, fh):
        json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "energy_j", "power_w"])
        for name, e in self.components():
            w.writerow([name, repr(e), repr(self.power(e))])

    def __add__(self, other: "EnergyReport") -> "EnergyReport":
        return EnergyReport(
            self.dram_array_dynamic + other.dram_array_dynamic,
            self.dram_peripheral_dynamic + other.dram_peripheral_dynamic,
            self.dram_array_static + other.dram_array_static,
            self.dram_peripheral_static + other.dram_peripheral_static,
            self.cpu + other.cpu,
            self.runtime_s + other.runtime_s,
            self.instructions + other.instructions)


def segment_energy(seg: Segment, cfg: PowerConfig) -> EnergyReport:
    op = seg.op_point
    v_arr = op.v_array
    v_peri = op.v_peripheral
    rate = op.channel_rate
    c = seg.counts
    nj = 1e-9
    arr = (c.get("ACT", 0) * cfg.e_act_pre + c.get("RD", 0) * cfg.e_rd_array
           + c.get("WR", 0) * cfg.e_wr_array + c.get("REF", 0) * cfg.e_ref)
    peri = c.get("RD", 0) * cfg.e_rd_io + c.get("WR", 0) * cfg.e_wr_io
    dur = (seg.end_ps - seg.start_ps) * 1e-12
    mw = 1e-3 * cfg.devices
    static_arr = scale_array_energy(cfg.p_static_array, v_arr, cfg) * mw * dur
    static_peri = scale_peripheral_power(cfg.p_static_peri, v_peri, rate, cfg) * mw * dur
    active = seg.core_active_ps * 1e-12
    idle = max(0.0, seg.n_cores * dur - active)
    return EnergyReport(
        scale_array_energy(arr, v_arr, cfg) * nj,
        # peripheral switching energy per operation follows V^2
        peri * (v_peri / cfg.v_nominal) ** 2 * nj,
        static_arr, static_peri,
        active * cfg.cpu_active_w + idle * cfg.cpu_idle_w,
        dur)


def account(stats, segments: Sequence[Segment], cfg: PowerConfig = None) -> EnergyReport:
    """Energy of a run from its per-segment command counts.

    Raises
    ------
    AccountingError
        If the segments do not tile ``[0, runtime]`` without gaps.
    """
    cfg = cfg or PowerConfig()
    end = stats.runtime_ps
    pos = 0
    total = EnergyReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    for seg in segments:
        if seg.start_ps != pos or seg.end_ps < seg.start_ps:
            raise AccountingError(f"operating-point history gap at {pos} ps")
        total = total + segment_energy(seg, cfg)
        pos = seg.end_ps
    if pos != end:
        raise AccountingError(f"history ends at {pos} ps, run ends at {end} ps")
    insts = sum(c.instructions for c in getattr(stats, "cores", []))
    return EnergyReport(total.dram_array_dynamic, total.dram_peripheral_dynamic,
                        total.dram_array_static, total.dram_peripheral_static,
                        total.cpu, end * 1e-12, insts)
