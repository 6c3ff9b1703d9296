"""Event-driven multi-core simulation loop.

Time is kept in integer picoseconds. Cores dispatch ``issue_width``
instructions per CPU cycle; a read holds its window slot until its data
returns and a core stalls once the oldest outstanding read is
``window`` instructions behind. Writes retire straight into the write
queue. Channels only wake on clock edges where a command might issue.

Events that share a timestamp run in a fixed order: read completions,
the interval controller, cores by id, then channels by id.
"""
from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence

from ..errors import InvalidParameterError, InvalidReferenceError
from ..power import EnergyReport, PowerConfig, Segment, account
from ..timing import LatencyTable, V_NOMINAL, VoltageOperatingPoint, lookup, published_table
from ..voltron import Policy, PolicyDecision, WorkloadProfile, make_policy
from .audit import TimingAuditor
from .controller import NEVER, Channel, Request, align_up
from .mapping import AddressMapper
from .system import CMDS, BankTiming, SystemConfig
from .trace import TraceRecord

_COMPLETE, _INTERVAL, _CORE, _CHANNEL = range(4)


class Core:
    __slots__ = ("id", "records", "pos", "gap_left", "insts", "t", "outstanding",
                 "blocked", "blocked_since", "stall_ps", "iv_stall_ps", "iv_insts",
                 "iv_misses", "credit", "reads", "writes", "finish", "total_insts",
                 "latency_cycles", "scheduled")

    def __init__(self, cid: int, records: Sequence[TraceRecord]):
        self.id = cid
        self.records = records
        self.pos = 0
        self.gap_left = records[0].gap if records else 0
        self.insts = 0
        self.t = 0
        self.outstanding = deque()
        self.blocked = None
        self.blocked_since = 0
        self.stall_ps = 0
        self.iv_stall_ps = 0
        self.iv_insts = 0
        self.iv_misses = 0
        self.credit = 0
        self.reads = 0
        self.writes = 0
        self.finish = None if records else 0
        self.total_insts = sum(r.gap for r in records) + len(records)
        self.latency_cycles = []
        self.scheduled = False

    def add_stall(self, until: int):
        if until > self.blocked_since:
            d = until - self.blocked_since
            self.stall_ps += d
            self.iv_stall_ps += d
            self.blocked_since = until


@dataclass
class CoreStats:
    instructions: int
    cycles: float
    ipc: float
    mpki: float
    stall_fraction: float
    reads: int
    writes: int
    mean_read_latency_cycles: float


@dataclass
class SimStats:
    """Outcome of one run. ``cycles`` counts CPU cycles."""

    cycles: int
    runtime_ps: int
    cores: List[CoreStats]
    bandwidth_utilization: List[float]
    commands: dict
    weighted_speedup: Optional[float] = None
    read_latencies: List[list] = field(default_factory=list)
    decisions: List[PolicyDecision] = field(default_factory=list)
    segments: List[Segment] = field(default_factory=list)
    command_log: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ipc(self) -> List[float]:
        return [c.ipc for c in self.cores]

    def as_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "runtime_ns": self.runtime_ps / 1000.0,
            "ipc": [c.ipc for c in self.cores],
            "mpki": [c.mpki for c in self.cores],
            "stall_fraction": [c.stall_fraction for c in self.cores],
            "cores": [asdict(c) for c in self.cores],
            "bandwidth_utilization": self.bandwidth_utilization,
            "commands": dict(self.commands),
            "weighted_speedup": self.weighted_speedup,
            "timing_violations": len(self.violations),
            "decisions": len(self.decisions),
        }

    def to_json(self, fh):
        json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def weighted_speedup(ipc_alone: Sequence[float], ipc_shared: Sequence[float]) -> float:
    """Sum over cores of shared IPC divided by alone IPC."""
    if len(ipc_alone) != len(ipc_shared):
        raise InvalidParameterError("alone and shared IPC vectors differ in length")
    total = 0.0
    for a, s in zip(ipc_alone, ipc_shared):
        if not a > 0:
            raise InvalidReferenceError("alone IPC must be positive")
        total += s / a
    return total


def collect_profile(cores: Sequence, interval_ps: int, cpu_cycle_ps: int = 500,
                    reset: bool = True) -> WorkloadProfile:
    """Interval MPKI and stall fraction over ``cores``.

    MPKI pools misses and instructions across cores; the stall fraction is
    the mean of each core's memory-stall time over the interval length.
    Counters are cleared afterwards unless ``reset`` is false.
    """
    if interval_ps <= 0:
        raise InvalidParameterError("interval must be positive")
    insts = sum(c.iv_insts for c in cores)
    misses = sum(c.iv_misses for c in cores)
    mpki = 1000.0 * misses / insts if insts else 0.0
    fracs = [min(1.0, c.iv_stall_ps / interval_ps) for c in cores]
    stall = sum(fracs) / len(fracs) if fracs else 0.0
    if reset:
        for c in cores:
            c.iv_insts = c.iv_misses = c.iv_stall_ps = 0
    return WorkloadProfile(mpki, stall)


class Simulation:
    """One self-contained, single-threaded simulation instance."""

    def __init__(self, config: SystemConfig, traces: Sequence[Sequence[TraceRecord]],
                 policy: Policy, power: PowerConfig = None, keep_log: bool = True,
                 audit: bool = True, max_time_ps: int = None):
        if len(traces) > config.cores:
            raise InvalidParameterError(
                f"{len(traces)} traces for a {config.cores}-core system")
        self.cfg = config
        self.policy = policy
        self.power = power or PowerConfig()
        self.mapper = AddressMapper(config.address_map, config.channels, config.ranks,
                                    config.banks, config.rows, config.columns)
        self.cores = [Core(i, list(tr)) for i, tr in enumerate(traces)]
        # decode everything up front so bad addresses fail before any work
        self.decoded = [[self.mapper.decode(r.address) for r in c.records] for c in self.cores]
        self.log = []
        self.keep_log = keep_log
        self.auditor = (TimingAuditor(config.channels, config.banks,
                                      int(round(config.t_refi_ns * 1000)), config.refresh)
                        if audit else None)
        self.max_time_ps = max_time_ps
        self._timing_cache = {}
        guard = self._guard(policy.table)
        dec = policy.initial()
        self.decisions = [dec]
        timings = self._bank_timings(dec)
        self.channels = [Channel(i, config, timings, guard, self.log)
                         for i in range(config.channels)]
        self.heap = []
        self.seq = 0
        self.req_seq = 0
        self.chan_wake = [None] * config.channels
        self.waiters = [set() for _ in range(config.channels)]
        self.segments = []
        self.seg_start = 0
        self.seg_counts = dict.fromkeys(CMDS, 0)
        self.seg_dec = dec
        self.active_reads = 0
        self.last_data = 0
        self.read_lat = [[] for _ in self.cores]
        self.unfinished = sum(1 for c in self.cores if c.finish is None)
        self.queued = 0
        self._pending_reads = {}

    # --- timing helpers ---------------------------------------------------------
    def _bt(self, tp) -> BankTiming:
        bt = self._timing_cache.get(tp)
        if bt is None:
            bt = self._timing_cache[tp] = BankTiming(tp, self.cfg)
        return bt

    def _bank_timings(self, dec: PolicyDecision):
        return [self._bt(tp) for tp in dec.bank_timings(self.cfg.banks)]

    def _guard(self, table: LatencyTable) -> int:
        from ..voltron import MEMDVFS_STEPS
        from ..timing import memdvfs_point
        sets = [row.timings for row in table.rows]
        for rate, v in MEMDVFS_STEPS:
            try:
                sets.append(memdvfs_point(table, rate, v).timings)
            except Exception:
                pass
        sets.append(self.policy.op_point.timings)
        return max(self._bt(tp).refresh_guard() for tp in sets)

    # --- event plumbing -----------------------------------------------------------
    def _push(self, t, kind, ident):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, ident, self.seq))

    def _wake_channel(self, ch: int, t: int):
        chan = self.channels[ch]
        edge = chan.earliest_edge(t)
        cur = self.chan_wake[ch]
        if cur is None or edge < cur:
            self.chan_wake[ch] = edge
            self._push(edge, _CHANNEL, ch)

    def _wake_core(self, core: Core, t: int):
        if not core.scheduled:
            core.scheduled = True
            self._push(t, _CORE, core.id)

    # --- core model -------------------------------------------------------------------
    def _run_core(self, core: Core, now: int):
        cfg = self.cfg
        if core.blocked is not None:
            core.add_stall(now)
            core.blocked = None
            if now > core.t:
                core.t = now
        window = cfg.window
        slot = cfg.slot_ps
        recs = core.records
        while True:
            if core.pos == len(recs):
                if core.outstanding:
                    core.blocked = "drain"
                    core.blocked_since = max(core.t, now)
                    return
                core.finish = max(core.t, now)
                self.unfinished -= 1
                return
            limit = core.outstanding[0][0] + window if core.outstanding else NEVER
            if core.gap_left:
                can = min(core.gap_left, limit - core.insts)
                if can <= 0:
                    core.blocked = "window"
                    core.blocked_since = core.t
                    return
                core.insts += can
                core.gap_left -= can
                core.credit += can
                core.t += can * slot
                continue
            if core.insts >= limit:
                core.blocked = "window"
                core.blocked_since = core.t
                return
            if core.t > now:
                self._wake_core(core, core.t)
                return
            rec = recs[core.pos]
            d = self.decoded[core.id][core.pos]
            chan = self.channels[d.channel]
            if not chan.can_accept(rec.is_write):
                core.blocked = "queue"
                core.blocked_since = core.t
                self.waiters[d.channel].add(core.id)
                return
            self.req_seq += 1
            req = Request(self.req_seq, core.id, rec.is_write, rec.address, d, now)
            req.edge = chan.earliest_edge(now)
            chan.enqueue(req)
            self.queued += 1
            self._wake_channel(d.channel, now)
            core.insts += 1
            core.credit += 1
            core.iv_insts += core.credit
            core.credit = 0
            if rec.is_write:
                core.writes += 1
            else:
                core.reads += 1
                core.iv_misses += 1
                req.entry = [core.insts - 1, False]
                core.outstanding.append(req.entry)
                self.active_reads += 1
            core.t += slot
            core.pos += 1
            if core.pos < len(recs):
                core.gap_left = recs[core.pos].gap

    def _complete(self, core: Core, req: Request, now: int):
        req.entry[1] = True
        while core.outstanding and core.outstanding[0][1]:
            core.outstanding.popleft()
        self.active_reads -= 1
        if core.blocked in ("window", "drain"):
            self._wake_core(core, now)

    # --- intervals ----------------------------------------------------------------------
    def _close_segment(self, end: int):
        if end > self.seg_start or any(self.seg_counts.values()):
            active = 0
            for c in self.cores:
                stop = end if c.finish is None else min(end, c.finish)
                active += max(0, stop - self.seg_start)
            self.segments.append(Segment(self.seg_start, end, self.seg_dec.op_point,
                                         dict(self.seg_counts), active, len(self.cores)))
        self.seg_start = end
        self.seg_counts = dict.fromkeys(CMDS, 0)

    def _interval(self, now: int):
        cfg = self.cfg
        for c in self.cores:
            if c.blocked is not None:
                c.add_stall(now)
        live = [c for c in self.cores if c.finish is None or c.finish > now - cfg.interval_ps]
        profile = collect_profile(live or self.cores, cfg.interval_ps, cfg.cpu_cycle_ps)
        for c in self.cores:
            c.iv_insts = c.iv_misses = c.iv_stall_ps = 0
        util = sum(ch.busy_ps for ch in self.channels) / (len(self.channels) * cfg.interval_ps)
        for ch in self.channels:
            ch.busy_ps = 0
        dec = self.policy.decide(now // cfg.cpu_cycle_ps, profile, min(1.0, util))
        self.decisions.append(dec)
        self._close_segment(now)
        self.seg_dec = dec
        timings = self._bank_timings(dec)
        for i, ch in enumerate(self.channels):
            ch.set_timings(timings)
            # the clock may have changed; re-align pending wakes
            if self.chan_wake[i] is not None:
                self.chan_wake[i] = None
                self._wake_channel(i, now)

    # --- main loop ------------------------------------------------------------------------
    def _done(self) -> bool:
        return self.unfinished == 0 and self.active_reads == 0 and self.queued == 0

    def run(self) -> SimStats:
        cfg = self.cfg
        for c in self.cores:
            if c.records:
                self._wake_core(c, 0)
        if not self._done():
            self._push(cfg.interval_ps, _INTERVAL, 0)
            for i in range(cfg.channels):
                self._wake_channel(i, 0)
        now = 0
        log_pos = 0
        while self.heap and not self._done():
            now, kind, ident, _ = heapq.heappop(self.heap)
            if self.max_time_ps is not None and now > self.max_time_ps:
                break
            if kind == _COMPLETE:
                req = self._pending_reads.pop(ident)
                self._complete(self.cores[req.core], req, now)
            elif kind == _INTERVAL:
                self._interval(now)
                self._push(now + cfg.interval_ps, _INTERVAL, 0)
            elif kind == _CORE:
                core = self.cores[ident]
                core.scheduled = False
                if core.finish is None:
                    self._run_core(core, now)
            else:
                if self.chan_wake[ident] != now:
                    continue
                self.chan_wake[ident] = None
                chan = self.channels[ident]
                before = len(self.log)
                issued, wake = chan.step(now)
                for entry in self.log[before:]:
                    self.seg_counts[entry[3]] += 1
                    if self.auditor is not None:
                        self.auditor.feed(*entry)
                if issued is not None:
                    req, done = issued
                    self.queued -= 1
                    self.last_data = max(self.last_data, done)
                    if not req.is_write:
                        self._pending_reads[req.seq] = req
                        ck = chan.banks[req.bank].timing.ck
                        self.read_lat[req.core].append((done - req.edge) // ck)
                        self._push(done, _COMPLETE, req.seq)
                if len(self.log) > before and self.waiters[ident]:
                    for cid in sorted(self.waiters[ident]):
                        self._wake_core(self.cores[cid], now)
                    self.waiters[ident].clear()
                if wake is not None and wake < NEVER // 2:
                    self._wake_channel(ident, wake)
                if not self.keep_log:
                    del self.log[:]
        end = max([c.finish or 0 for c in self.cores] + [self.last_data, 0])
        if self.max_time_ps is not None and not self._done():
            end = self.max_time_ps
        self._close_segment(end)
        if self.auditor is not None:
            self.auditor.finish(end)
        return self._stats(end)

    def _stats(self, end: int) -> SimStats:
        cfg = self.cfg
        cores = []
        for c in self.cores:
            fin = c.finish if c.finish is not None else end
            cyc = fin / cfg.cpu_cycle_ps
            lat = self.read_lat[c.id]
            done_insts = c.insts
            cores.append(CoreStats(
                done_insts, cyc, done_insts / cyc if cyc else 0.0,
                1000.0 * c.reads / done_insts if done_insts else 0.0,
                min(1.0, c.stall_ps / fin) if fin else 0.0,
                c.reads, c.writes, sum(lat) / len(lat) if lat else 0.0))
        busy = [0.0] * cfg.channels
        counts = dict.fromkeys(CMDS, 0)
        for seg in self.segments:
            for k, v in seg.counts.items():
                counts[k] += v
        for i, ch in enumerate(self.channels):
            busy[i] = ch.total_busy_ps / end if end else 0.0
        return SimStats(
            cycles=-(-end // cfg.cpu_cycle_ps),
            runtime_ps=end,
            cores=cores,
            bandwidth_utilization=busy,
            commands=counts,
            read_latencies=self.read_lat,
            decisions=self.decisions,
            segments=self.segments,
            command_log=self.log if self.keep_log else [],
            violations=list(self.auditor.violations) if self.auditor else [],
        )


def run_simulation(config: SystemConfig, traces, policy="fixed",
                   op_point_initial: VoltageOperatingPoint = None,
                   table: LatencyTable = None, target_loss: float = 5.0,
                   power: PowerConfig = None, ipc_alone: Sequence[float] = None,
                   keep_log: bool = True, audit: bool = True, max_cycles: int = None,
                   **policy_kw):
    """Simulate ``traces`` (one per core) and account energy.

    Parameters
    ----------
    config : SystemConfig
    traces : sequence of trace record lists, at most ``config.cores``
    policy : str or Policy
        ``fixed``, ``voltron``, ``voltron_bl`` or ``memdvfs``, or a ready
        policy object.
    op_point_initial : VoltageOperatingPoint, optional
        Operating point for the ``fixed`` policy (nominal by default).
    ipc_alone : sequence of float, optional
        Per-core alone IPCs; when given, weighted speedup is filled in.
    max_cycles : int, optional
        Stop after this many CPU cycles even if traces remain.

    Returns
    -------
    (SimStats, EnergyReport)
    """
    table = table or published_table()
    if isinstance(policy, str):
        policy = make_policy(policy, table, target_loss, op_point_initial, **policy_kw)
    limit = None if max_cycles is None else int(max_cycles) * config.cpu_cycle_ps
    sim = Simulation(config, traces, policy, power, keep_log=keep_log, audit=audit,
                     max_time_ps=limit)
    stats = sim.run()
    if ipc_alone is not None:
        stats.weighted_speedup = weighted_speedup(ipc_alone, stats.ipc)
    report = account(stats, stats.segments, sim.power)
    return stats, report
