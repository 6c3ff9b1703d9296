"""System configuration and per-bank timing sets in integer picoseconds."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import InvalidParameterError
from ..timing import TimingParams

CMDS = ("ACT", "PRE", "RD", "WR", "REF")


def ps(ns: float) -> int:
    return int(round(ns * 1000))


@dataclass(frozen=True)
class SystemConfig:
    """Simulated machine. Defaults follow a 4-core, dual-channel DDR3L-1600 box."""

    cores: int = 4
    cpu_ghz: float = 2.0
    issue_width: int = 4
    window: int = 192
    channels: int = 2
    ranks: int = 1
    banks: int = 8
    rows: int = 32768
    columns: int = 128
    read_queue: int = 64
    write_queue: int = 64
    drain_high: int = 32
    drain_low: int = 16
    interval_cycles: int = 4_000_000
    address_map: str = "RoBaRaCoCh"
    refresh: bool = True
    t_refi_ns: float = 7800.0
    t_rfc_ns: float = 260.0
    t_rtp_ns: float = 7.5
    t_wr_ns: float = 15.0
    t_wtr_ns: float = 7.5
    t_rrd_ns: float = 6.0
    t_faw_ns: float = 30.0
    t_ccd_cycles: int = 4
    burst_cycles: int = 4

    def __post_init__(self):
        if not 1 <= self.cores <= 4:
            raise InvalidParameterError("1 to 4 cores supported")
        if self.ranks != 1:
            raise InvalidParameterError("only one rank per channel is modelled")
        for name in ("channels", "banks", "window", "issue_width", "read_queue",
                     "write_queue", "interval_cycles"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        if not 0 <= self.drain_low < self.drain_high <= self.write_queue:
            raise InvalidParameterError("need 0 <= drain_low < drain_high <= write_queue")
        cyc = 1000.0 / self.cpu_ghz
        if abs(cyc - round(cyc)) > 1e-9 or round(cyc) % self.issue_width:
            raise InvalidParameterError("cpu cycle must be a whole number of issue slots in ps")

    @property
    def cpu_cycle_ps(self) -> int:
        return int(round(1000.0 / self.cpu_ghz))

    @property
    def slot_ps(self) -> int:
        return self.cpu_cycle_ps // self.issue_width

    @property
    def interval_ps(self) -> int:
        return self.interval_cycles * self.cpu_cycle_ps


class BankTiming:
    """Every constraint the scheduler and auditor need, in picoseconds."""

    __slots__ = ("ck", "rcd", "rp", "ras", "cl", "cwl", "burst", "ccd", "rtp",
                 "wr_pre", "wr_rd", "rd_wr", "rrd", "faw", "rfc", "params")

    def __init__(self, tp: TimingParams, cfg: SystemConfig):
        ck = ps(tp.t_ck)
        cyc = lambda ns_: max(0, math.ceil(ns_ / tp.t_ck - 1e-9))
        self.params = tp
        self.ck = ck
        self.rcd = tp.rcd * ck
        self.rp = tp.rp * ck
        self.ras = tp.ras * ck
        self.cl = tp.cl * ck
        self.cwl = tp.cwl * ck
        self.burst = cfg.burst_cycles * ck
        self.ccd = cfg.t_ccd_cycles * ck
        self.rtp = max(4, cyc(cfg.t_rtp_ns)) * ck
        self.wr_pre = (tp.cwl + cfg.burst_cycles + cyc(cfg.t_wr_ns)) * ck
        self.wr_rd = (tp.cwl + cfg.burst_cycles + max(4, cyc(cfg.t_wtr_ns))) * ck
        self.rd_wr = max(0, tp.cl + cfg.burst_cycles + 2 - tp.cwl) * ck
        self.rrd = max(4, cyc(cfg.t_rrd_ns)) * ck
        self.faw = cyc(cfg.t_faw_ns) * ck
        self.rfc = cyc(cfg.t_rfc_ns) * ck

    def refresh_guard(self) -> int:
        """Lead time before a REF in which new ACTs and column commands stop."""
        ck = self.ck
        return max(self.ras, self.wr_pre, self.rtp) + 8 * ck + self.rp + 2 * ck
