"""Trace-driven multi-core DRAM simulation."""
from .audit import TimingAuditor, Violation, audit
from .controller import Channel, Request
from .engine import (CoreStats, SimStats, Simulation, collect_profile, run_simulation,
                     weighted_speedup)
from .mapping import AddressMapper, Decoded
from .system import BankTiming, SystemConfig
from .trace import (TraceRecord, format_trace, load_trace, parse_lines, synthetic_trace,
                    workload, write_trace)

__all__ = [
    "AddressMapper", "BankTiming", "Channel", "CoreStats", "Decoded", "Request",
    "SimStats", "Simulation", "SystemConfig", "TimingAuditor", "TraceRecord",
    "Violation", "audit", "collect_profile", "format_trace", "load_trace",
    "parse_lines", "run_simulation", "synthetic_trace", "weighted_speedup", "workload", "write_trace",
]
