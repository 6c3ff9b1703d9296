"""Post-LLC miss traces: parsing, writing and synthetic generation.

One record per line: ``<non_mem_insts> <hex_address> <R|W>``. Blank lines
and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from ..errors import InvalidParameterError, TraceParseError


@dataclass(frozen=True)
class TraceRecord:
    gap: int
    address: int
    is_write: bool


def parse_lines(lines: Iterable[str], path: str = "<trace>") -> List[TraceRecord]:
    out = []
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise TraceParseError(path, lineno, f"expected 3 fields, got {len(parts)}")
        gap_s, addr_s, kind = parts
        try:
            gap = int(gap_s)
        except ValueError:
            raise TraceParseError(path, lineno, f"bad instruction count {gap_s!r}") from None
        if gap < 0:
            raise TraceParseError(path, lineno, "negative instruction count")
        try:
            addr = int(addr_s, 16)
        except ValueError:
            raise TraceParseError(path, lineno, f"bad hex address {addr_s!r}") from None
        if addr < 0 or addr >= 1 << 64:
            raise TraceParseError(path, lineno, "address does not fit in 64 bits")
        kind = kind.upper()
        if kind not in ("R", "W"):
            raise TraceParseError(path, lineno, f"access type must be R or W, got {kind!r}")
        out.append(TraceRecord(gap, addr, kind == "W"))
    return out


def load_trace(path) -> List[TraceRecord]:
    with open(path) as fh:
        return parse_lines(fh, os.fspath(path))


def format_trace(records: Iterable[TraceRecord]) -> str:
    return "".join(f"{r.gap} 0x{r.address:x} {'W' if r.is_write else 'R'}\n"
                   for r in records)


def write_trace(path, records: Iterable[TraceRecord]):
    with open(path, "w") as fh:
        fh.write(format_trace(records))


# kind -> (mean non-memory instructions between misses, sequential share, write share)
WORKLOADS = {
    "memory": (50.0, 0.0, 0.2),
    "compute": (1000.0, 0.0, 0.2),
    "random": (200.0, 0.0, 0.3),
    "stream": (20.0, 0.75, 0.2),
}


def synthetic_trace(kind: str, n_requests: int, seed: int = 0, core: int = 0,
                    address_bits: int = 32, mean_gap: float = None,
                    write_fraction: float = None) -> List[TraceRecord]:
    """Generate a synthetic post-LLC miss stream.

    ``memory`` is a stream of row misses to random lines (~16 read MPKI);
    ``compute`` misses about once per thousand instructions; ``random``
    sits in between with 30% writes; ``stream`` walks consecutive lines
    with occasional random jumps, so most accesses hit an open row.
    Gaps are geometric with the given mean.
    """
    if kind not in WORKLOADS:
        raise InvalidParameterError(f"unknown workload {kind!r}")
    if n_requests < 0:
        raise InvalidParameterError("n_requests must be non-negative")
    gap, seq_share, wr = WORKLOADS[kind]
    gap = gap if mean_gap is None else mean_gap
    wr = wr if write_fraction is None else write_fraction
    if gap < 0 or not 0 <= wr <= 1:
        raise InvalidParameterError("mean_gap must be >= 0 and write_fraction in [0, 1]")
    rng = np.random.default_rng([seed, core, list(WORKLOADS).index(kind)])
    lines = 1 << (address_bits - 6)
    gaps = rng.geometric(1.0 / (gap + 1.0), n_requests) - 1
    rand = rng.integers(0, lines, n_requests)
    if seq_share > 0:
        base = int(rng.integers(lines))
        seq = (base + np.arange(n_requests)) % lines
        addrs = np.where(rng.random(n_requests) < seq_share, seq, rand)
    else:
        addrs = rand
    writes = rng.random(n_requests) < wr
    return [TraceRecord(int(g), int(a) << 6, bool(w)) for g, a, w in zip(gaps, addrs, writes)]


def workload(kind: str, cores: int = 4, n_requests: int = 10000, seed: int = 1,
             **kw) -> List[List[TraceRecord]]:
    """One synthetic trace per core, seeded per core from ``seed``.

    The defaults give the bundled memory-intensive mix used for voltage
    sweeps: four cores of ``memory`` traces, 10k misses each.
    """
    return [synthetic_trace(kind, n_requests, seed=seed, core=c, **kw) for c in range(cores)]
