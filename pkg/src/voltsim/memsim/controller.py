"""One DRAM channel: per-bank state, FR-FCFS scheduling and refresh."""
from __future__ import annotations

from typing import List, Optional

from .system import BankTiming, SystemConfig

NEVER = 1 << 62


class Request:
    __slots__ = ("seq", "core", "is_write", "address", "channel", "bank", "row",
                 "column", "arrival", "edge", "completion", "entry")

    def __init__(self, seq, core, is_write, address, d, arrival):
        self.seq = seq
        self.core = core
        self.is_write = is_write
        self.address = address
        self.channel = d.channel
        self.bank = d.bank
        self.row = d.row
        self.column = d.column
        self.arrival = arrival
        self.edge = None
        self.completion = None
        self.entry = None


class Bank:
    __slots__ = ("open_row", "next_act", "next_pre", "next_rd", "next_wr", "timing")

    def __init__(self, timing: BankTiming):
        self.open_row = None
        self.next_act = 0
        self.next_pre = 0
        self.next_rd = 0
        self.next_wr = 0
        self.timing = timing


def align_up(t: int, ck: int) -> int:
    return -(-t // ck) * ck


class Channel:
    """FR-FCFS scheduler for one channel with a single rank.

    Requests wait in per-bank lists, one set for reads and one for writes.
    Each clock edge at most one command is issued: the oldest ready row hit
    first, otherwise the ready ACT or PRE serving the oldest request. Reads
    have priority unless the write queue has reached ``drain_high``; the
    drain continues until it falls to ``drain_low``. Writes are also served
    whenever no reads are waiting.
    """

    def __init__(self, index: int, cfg: SystemConfig, timings: List[BankTiming],
                 guard: int, log: list):
        self.index = index
        self.cfg = cfg
        self.banks = [Bank(t) for t in timings]
        self.ck = timings[0].ck
        self.reads = [[] for _ in range(cfg.banks)]
        self.writes = [[] for _ in range(cfg.banks)]
        self.n_reads = 0
        self.n_writes = 0
        self.drain = False
        self.next_rd = 0
        self.next_wr = 0
        self.next_act = 0
        self.faw = []
        self.refi = int(round(cfg.t_refi_ns * 1000))
        self.next_ref = self.refi if cfg.refresh else NEVER
        self.guard = guard
        self.last_cmd = -NEVER
        self.busy_ps = 0
        self.total_busy_ps = 0
        self.log = log
        self.counts = dict.fromkeys(("ACT", "PRE", "RD", "WR", "REF"), 0)

    # --- queue management ---------------------------------------------------
    def can_accept(self, is_write: bool) -> bool:
        if is_write:
            return self.n_writes < self.cfg.write_queue
        return self.n_reads < self.cfg.read_queue

    def enqueue(self, req: Request):
        if req.is_write:
            self.writes[req.bank].append(req)
            self.n_writes += 1
        else:
            self.reads[req.bank].append(req)
            self.n_reads += 1

    @property
    def pending(self) -> int:
        return self.n_reads + self.n_writes

    def set_timings(self, timings: List[BankTiming]):
        for bank, t in zip(self.banks, timings):
            bank.timing = t
        self.ck = timings[0].ck

    def earliest_edge(self, t: int) -> int:
        return max(align_up(t, self.ck), self.last_cmd + self.ck)

    # --- issue ----------------------------------------------------------------
    def _issue(self, t, b, cmd, row):
        self.last_cmd = t
        self.counts[cmd] += 1
        self.log.append((t, self.index, b, cmd, row, self.banks[max(b, 0)].timing))

    def _act(self, t, b, row):
        bank = self.banks[b]
        tm = bank.timing
        bank.open_row = row
        bank.next_rd = bank.next_wr = t + tm.rcd
        bank.next_pre = max(bank.next_pre, t + tm.ras)
        self.next_act = t + tm.rrd
        self.faw.append(t + tm.faw)
        if len(self.faw) > 4:
            self.faw.pop(0)
        self._issue(t, b, "ACT", row)

    def _pre(self, t, b):
        bank = self.banks[b]
        row = bank.open_row
        bank.open_row = None
        bank.next_act = max(bank.next_act, t + bank.timing.rp)
        self._issue(t, b, "PRE", row)

    def _column(self, t, req) -> int:
        bank = self.banks[req.bank]
        tm = bank.timing
        if req.is_write:
            self.writes[req.bank].remove(req)
            self.n_writes -= 1
            bank.next_pre = max(bank.next_pre, t + tm.wr_pre)
            self.next_wr = max(self.next_wr, t + tm.ccd)
            self.next_rd = max(self.next_rd, t + tm.wr_rd)
            done = t + tm.cwl + tm.burst
            self._issue(t, req.bank, "WR", req.row)
        else:
            self.reads[req.bank].remove(req)
            self.n_reads -= 1
            bank.next_pre = max(bank.next_pre, t + tm.rtp)
            self.next_rd = max(self.next_rd, t + tm.ccd)
            self.next_wr = max(self.next_wr, t + tm.rd_wr)
            done = t + tm.cl + tm.burst
            self._issue(t, req.bank, "RD", req.row)
        self.busy_ps += tm.burst
        self.total_busy_ps += tm.burst
        req.completion = done
        return done

    def _refresh_step(self, t):
        """Close every bank and issue REF exactly on schedule."""
        wake = self.next_ref
        open_banks = [b for b, bank in enumerate(self.banks) if bank.open_row is not None]
        if not open_banks and t >= self.next_ref:
            rfc = max(bank.timing.rfc for bank in self.banks)
            for bank in self.banks:
                bank.next_act = max(bank.next_act, t + rfc)
            self._issue(t, -1, "REF", -1)
            self.next_ref += self.refi
            return None, t + self.ck
        for b in open_banks:
            bank = self.banks[b]
            if bank.next_pre <= t:
                self._pre(t, b)
                return None, t + self.ck
            wake = min(wake, bank.next_pre)
        return None, wake

    def step(self, t: int):
        """Try to issue one command at clock edge ``t``.

        Returns ``(request, completion_time)`` when a column command was
        issued (``None`` otherwise) and the next time worth waking up.
        """
        if t >= self.next_ref - self.guard:
            return self._refresh_step(t)
        if self.drain and self.n_writes <= self.cfg.drain_low:
            self.drain = False
        elif not self.drain and self.n_writes >= self.cfg.drain_high:
            self.drain = True
        serve_writes = self.drain or (self.n_reads == 0 and self.n_writes > 0)
        lists = self.writes if serve_writes else self.reads
        ch_col = self.next_wr if serve_writes else self.next_rd
        faw_ready = self.faw[0] if len(self.faw) == 4 else 0
        act_ready = max(self.next_act, faw_ready)

        best_hit = None
        best_other = None
        wake = self.next_ref - self.guard
        for b, reqs in enumerate(lists):
            if not reqs:
                continue
            bank = self.banks[b]
            open_row = bank.open_row
            hit = None
            if open_row is not None:
                for r in reqs:
                    if r.row == open_row:
                        hit = r
                        break
            if hit is not None:
                ready = max(ch_col, bank.next_wr if serve_writes else bank.next_rd)
                if ready <= t:
                    if best_hit is None or hit.seq < best_hit.seq:
                        best_hit = hit
                else:
                    wake = min(wake, ready)
                continue
            oldest = reqs[0]
            ready = act_ready if open_row is None else bank.next_pre
            if open_row is None:
                ready = max(ready, bank.next_act)
            if ready <= t:
                if best_other is None or oldest.seq < best_other[0].seq:
                    best_other = (oldest, open_row is None)
            else:
                wake = min(wake, ready)
        if best_hit is not None:
            return (best_hit, self._column(t, best_hit)), t + self.ck
        if best_other is not None:
            req, is_act = best_other
            if is_act:
                self._act(t, req.bank, req.row)
            else:
                self._pre(t, req.bank)
            return None, t + self.ck
        return None, wake
