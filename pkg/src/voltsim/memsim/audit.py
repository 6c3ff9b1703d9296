"""Post-hoc timing audit of a command log.

The auditor replays the log with its own per-bank bookkeeping and knows
nothing about how the scheduler made its choices. Each constraint is
measured with the timing set that was active when the earlier of the two
commands issued.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    time_ps: int
    channel: int
    bank: int
    cmd: str
    rule: str


class _BankLog:
    __slots__ = ("open_row", "act", "pre", "rd", "wr")

    def __init__(self):
        self.open_row = None
        self.act = self.pre = self.rd = self.wr = None


class _ChanLog:
    def __init__(self, banks):
        self.banks = [_BankLog() for _ in range(banks)]
        self.last = None
        self.acts = []
        self.rd = self.wr = self.ref = None
        self.bus_free = 0
        self.refs = 0


class TimingAuditor:
    def __init__(self, channels: int, banks: int, refi_ps: int, refresh: bool = True):
        self.chans = [_ChanLog(banks) for _ in range(channels)]
        self.refi = refi_ps
        self.refresh = refresh
        self.violations = []
        self.checked = 0

    def _bad(self, t, ch, b, cmd, rule):
        self.violations.append(Violation(t, ch, b, cmd, rule))

    def feed(self, t, ch, b, cmd, row, tm):
        self.checked += 1
        c = self.chans[ch]
        if c.last is not None and t <= c.last[0]:
            self._bad(t, ch, b, cmd, "command bus: two commands on one edge")
        if tm is not None and t % tm.ck:
            self._bad(t, ch, b, cmd, "command off the clock edge")
        if c.ref is not None and t < c.ref[0] + c.ref[1].rfc and cmd != "REF":
            self._bad(t, ch, b, cmd, "tRFC")
        if cmd == "REF":
            self._ref(t, ch, c, tm)
            c.last = (t, tm)
            return
        bank = c.banks[b]
        if cmd == "ACT":
            if bank.open_row is not None:
                self._bad(t, ch, b, cmd, "ACT to an open bank")
            if bank.pre and t < bank.pre[0] + bank.pre[1].rp:
                self._bad(t, ch, b, cmd, "tRP")
            if c.acts and t < c.acts[-1][0] + c.acts[-1][1].rrd:
                self._bad(t, ch, b, cmd, "tRRD")
            if len(c.acts) >= 4 and t < c.acts[-4][0] + c.acts[-4][1].faw:
                self._bad(t, ch, b, cmd, "tFAW")
            c.acts = (c.acts + [(t, tm)])[-4:]
            bank.open_row = row
            bank.act = (t, tm)
        elif cmd == "PRE":
            if bank.open_row is None:
                self._bad(t, ch, b, cmd, "PRE to a closed bank")
            if bank.act and t < bank.act[0] + bank.act[1].ras:
                self._bad(t, ch, b, cmd, "tRAS")
            if bank.rd and t < bank.rd[0] + bank.rd[1].rtp:
                self._bad(t, ch, b, cmd, "tRTP")
            if bank.wr and t < bank.wr[0] + bank.wr[1].wr_pre:
                self._bad(t, ch, b, cmd, "tWR")
            bank.open_row = None
            bank.pre = (t, tm)
        elif cmd in ("RD", "WR"):
            if bank.open_row is None or bank.open_row != row:
                self._bad(t, ch, b, cmd, "column command to a row that is not open")
            if bank.act and t < bank.act[0] + bank.act[1].rcd:
                self._bad(t, ch, b, cmd, "tRCD")
            for prev in (c.rd, c.wr):
                if prev and t < prev[0] + prev[1].ccd:
                    self._bad(t, ch, b, cmd, "tCCD")
            if cmd == "RD":
                if c.wr and t < c.wr[0] + c.wr[1].wr_rd:
                    self._bad(t, ch, b, cmd, "tWTR")
                start = t + tm.cl
                c.rd = bank.rd = (t, tm)
            else:
                if c.rd and t < c.rd[0] + c.rd[1].rd_wr:
                    self._bad(t, ch, b, cmd, "read-to-write turnaround")
                start = t + tm.cwl
                c.wr = bank.wr = (t, tm)
            if start < c.bus_free:
                self._bad(t, ch, b, cmd, "data bus overlap (tCL/tCWL)")
            c.bus_free = start + tm.burst
        else:
            self._bad(t, ch, b, cmd, "unknown command")
        c.last = (t, tm)

    def _ref(self, t, ch, c, tm):
        for b, bank in enumerate(c.banks):
            if bank.open_row is not None:
                self._bad(t, ch, b, "REF", "REF with an open bank")
            if bank.pre and t < bank.pre[0] + bank.pre[1].rp:
                self._bad(t, ch, b, "REF", "tRP before REF")
        expected = (c.refs + 1) * self.refi
        if t != expected:
            self._bad(t, ch, -1, "REF", f"tREFI: expected REF at {expected} ps")
        c.refs += 1
        c.ref = (t, tm)

    def finish(self, end_ps: int):
        """Check that no scheduled refresh was skipped before ``end_ps``."""
        if not self.refresh:
            return
        due = end_ps // self.refi
        for ch, c in enumerate(self.chans):
            if c.refs < due:
                self._bad(end_ps, ch, -1, "REF", f"missing refreshes: {c.refs} of {due}")


def audit(log, channels: int, banks: int, refi_ps: int, end_ps: int = None,
          refresh: bool = True):
    """Audit a full command log; returns the list of violations."""
    aud = TimingAuditor(channels, banks, refi_ps, refresh)
    for t, ch, b, cmd, row, tm in log:
        aud.feed(t, ch, b, cmd, row, tm)
    if end_ps is not None:
        aud.finish(end_ps)
    return aud.violations
