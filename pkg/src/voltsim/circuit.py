"""Lumped bitline model: charge sharing, sensing, restoration and precharge.

The bitline is modelled as a piecewise-exponential waveform. Each phase
relaxes toward its rail with a time constant that grows as the array
voltage approaches the transistor overdrive threshold::

    tau(v) = tau0 * (v_nominal - v_th) / (v - v_th)

Minimum latencies are the threshold-crossing times of that waveform. They
are computed in closed form by :func:`derive_min_latencies` and, as an
independent route, by integrating the phase ODEs with fixed-step RK4 in
:func:`simulate_bitline`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    InvalidCalibrationInputError,
    InvalidParameterError,
    OutOfModelRangeError,
    UnreachableThresholdError,
)

PHASES = ("precharged", "sharing", "sensing", "restoring", "precharging")


@dataclass(frozen=True)
class CircuitParams:
    """Parameters of the lumped bitline model.

    Capacitances are in fF, voltages in V, times in ns. The three
    ``v_th_*`` values are per-phase overdrive thresholds; ``tau0_*`` are the
    phase time constants at ``v_nominal``. ``t_restore_delay`` is the latch
    settle time between reaching the access threshold and the restore
    drivers engaging; ``t_precharge_delay`` is the wordline fall time before
    the equalizer starts pulling the bitline to Vdd/2.

    The shipped defaults are the result of :func:`calibrate` against the
    published voltage/latency table with a 1.375 guardband and 1.25 ns clock.
    """

    c_cell: float = 24.0
    c_bitline: float = 144.0
    v_nominal: float = 1.35
    v_th_sense: float = 0.764
    v_th_restore: float = 0.728
    v_th_precharge: float = 0.799
    tau0_sense: float = 3.4118237065755324
    tau0_restore: float = 0.9979779058191892
    tau0_precharge: float = 0.49964733664230826
    t_charge_share: float = 7.390158465387824
    t_restore_delay: float = 13.752530771519053
    t_precharge_delay: float = 7.754807498488214
    thresh_access: float = 0.75
    thresh_restore: float = 0.98
    thresh_precharge_band: float = 0.02

    def __post_init__(self):
        if self.c_cell < 0 or self.c_bitline <= 0:
            raise InvalidParameterError("capacitances must be positive")
        if self.v_nominal <= 0:
            raise InvalidParameterError("v_nominal must be positive")
        if not 0 < self.thresh_access < self.thresh_restore <= 1:
            raise InvalidParameterError(
                "need 0 < thresh_access < thresh_restore <= 1")
        if not 0 < self.thresh_precharge_band < 0.5:
            raise InvalidParameterError("need 0 < thresh_precharge_band < 0.5")
        for name in ("tau0_sense", "tau0_restore", "tau0_precharge"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        for name in ("t_charge_share", "t_restore_delay", "t_precharge_delay"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be non-negative")
        if self.max_threshold >= self.v_nominal:
            raise InvalidParameterError("overdrive thresholds must be below v_nominal")

    @property
    def max_threshold(self) -> float:
        return max(self.v_th_sense, self.v_th_restore, self.v_th_precharge)

    @property
    def sharing_ratio(self) -> float:
        return self.c_cell / (self.c_cell + self.c_bitline)


@dataclass(frozen=True)
class RawLatencies:
    """Pre-guardband minimum reliable latencies (ns) at one voltage."""

    t_rcd_raw: float
    t_ras_raw: float
    t_rp_raw: float

    def __post_init__(self):
        if not 0 < self.t_rcd_raw < self.t_ras_raw:
            raise InvalidParameterError("need 0 < t_rcd_raw < t_ras_raw")
        if self.t_rp_raw <= 0:
            raise InvalidParameterError("t_rp_raw must be positive")


@dataclass
class BitlineTrajectory:
    times: np.ndarray
    voltages: np.ndarray
    phases: list
    markers: dict = field(default_factory=dict)
    vdd: float = 0.0
    t_pre_issue: float = 0.0

    def to_csv(self, path_or_file):
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_ns", "voltage_v", "phase"])
            for t, v, p in zip(self.times, self.voltages, self.phases):
                w.writerow([repr(float(t)), repr(float(v)), p])
        finally:
            if own:
                fh.close()


def overdrive_tau(tau0: float, v_th: float, v_nominal: float, vdd: float) -> float:
    """Phase time constant scaled by transistor overdrive."""
    if vdd <= v_th:
        raise OutOfModelRangeError(
            f"vdd={vdd} V is at or below the overdrive threshold {v_th} V")
    return tau0 * (v_nominal - v_th) / (vdd - v_th)


def charge_share(params: CircuitParams, cell_stores_one: bool, vdd: float) -> float:
    """Bitline voltage right after the cell shares its charge.

    Charge conservation between a cell at Vdd (or 0) and a bitline at Vdd/2
    perturbs the bitline by ``vdd * c_cell / (2 * (c_cell + c_bitline))``.
    """
    if vdd <= 0:
        raise InvalidParameterError("vdd must be positive")
    if params.c_cell < 0 or params.c_bitline <= 0:
        raise InvalidParameterError("capacitances must be positive")
    delta = vdd * params.sharing_ratio / 2.0
    return vdd / 2.0 + delta if cell_stores_one else vdd / 2.0 - delta


def _check_range(params: CircuitParams, vdd: float):
    if vdd <= params.max_threshold:
        raise OutOfModelRangeError(
            f"vdd={vdd} V is outside the model range (> {params.max_threshold} V)")


def _taus(params: CircuitParams, vdd: float):
    vn = params.v_nominal
    return (overdrive_tau(params.tau0_sense, params.v_th_sense, vn, vdd),
            overdrive_tau(params.tau0_restore, params.v_th_restore, vn, vdd),
            overdrive_tau(params.tau0_precharge, params.v_th_precharge, vn, vdd))


# log-ratios of each phase's exponential; all are voltage independent
def _sense_log(params: CircuitParams) -> float:
    remaining = 0.5 * (1.0 - params.sharing_ratio)
    target = 1.0 - params.thresh_access
    return math.log(remaining / target) if remaining > target else 0.0


def _restore_log(params: CircuitParams) -> float:
    if params.thresh_restore >= 1.0:
        return math.inf
    return math.log((1.0 - params.thresh_access) / (1.0 - params.thresh_restore))


def _precharge_log(params: CircuitParams) -> float:
    return math.log((params.thresh_restore - 0.5) / (0.5 * params.thresh_precharge_band))


def derive_min_latencies(params: CircuitParams, vdd: float,
                         horizon: float = 200.0) -> RawLatencies:
    """Closed-form threshold-crossing times at array voltage ``vdd``.

    tRCD is the time for the bitline to reach ``thresh_access * vdd``; tRAS
    adds the restore delay and the restore exponential up to
    ``thresh_restore * vdd``; tRP is measured from a PRE issued at that
    point until the bitline is within the precharge band of Vdd/2.

    Raises
    ------
    OutOfModelRangeError
        If ``vdd`` is not above every overdrive threshold.
    UnreachableThresholdError
        If any crossing happens after ``horizon`` ns.
    """
    _check_range(params, vdd)
    tau_s, tau_r, tau_p = _taus(params, vdd)
    t_rcd = params.t_charge_share + tau_s * _sense_log(params)
    t_ras = t_rcd + params.t_restore_delay + tau_r * _restore_log(params)
    t_rp = params.t_precharge_delay + tau_p * _precharge_log(params)
    for name, value in (("tRCD", t_rcd), ("tRAS", t_ras), ("tRP", t_rp)):
        if not value <= horizon:
            raise UnreachableThresholdError(
                f"{name} threshold not reached within {horizon} ns at {vdd} V")
    return RawLatencies(t_rcd, t_ras, t_rp)


def _rk4_step(v: float, h: float, target: float, tau: float) -> float:
    k1 = (target - v) / tau
    k2 = (target - (v + 0.5 * h * k1)) / tau
    k3 = (target - (v + 0.5 * h * k2)) / tau
    k4 = (target - (v + h * k3)) / tau
    return v + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _locate(v: float, h: float, target: float, tau: float, crossed) -> float:
    """Smallest step in (0, h] whose RK4 result satisfies ``crossed``."""
    lo, hi = 0.0, h
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if crossed(_rk4_step(v, mid, target, tau)):
            hi = mid
        else:
            lo = mid
    return hi


def simulate_bitline(params: CircuitParams, vdd: float, cell_stores_one: bool = True,
                     t_pre_issue: float = 50.0, dt: float = 0.01,
                     tail: float = 2.0, horizon: float = 400.0) -> BitlineTrajectory:
    """Integrate the bitline waveform for one ACT ... PRE sequence.

    ACT is issued at t=0 and PRE at ``t_pre_issue``. Samples lie on the
    ``dt`` grid plus every phase event, so sample times are strictly
    increasing. Threshold events are located by bisecting the RK4 step
    length. Integration stops ``tail`` ns after precharge completes.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    if t_pre_issue <= 0:
        raise InvalidParameterError("t_pre_issue must be positive")
    _check_range(params, vdd)
    tau_s, tau_r, tau_p = _taus(params, vdd)
    half = 0.5 * vdd
    rail = vdd if cell_stores_one else 0.0
    sgn = 1.0 if cell_stores_one else -1.0
    v_access = half + sgn * (params.thresh_access - 0.5) * vdd
    v_restore = half + sgn * (params.thresh_restore - 0.5) * vdd
    band = params.thresh_precharge_band * half

    times = [0.0]
    volts = [half]
    phases = ["precharged"]
    markers = {"T1": None, "T2": None, "T3": None, "T4": None}
    st = {"t": 0.0, "v": half}

    def record(t, v, label):
        if t - times[-1] <= 1e-9:
            volts[-1] = v
            phases[-1] = label
        else:
            times.append(t)
            volts.append(v)
            phases.append(label)

    def advance(stop, target, tau, label, event=None):
        # returns True if ``event`` fired before ``stop``
        t, v = st["t"], st["v"]
        while t < stop - 1e-12:
            nxt = (math.floor(t / dt + 1e-9) + 1) * dt
            s = min(nxt, stop)
            h = s - t
            v_new = v if target is None else _rk4_step(v, h, target, tau)
            if event is not None and event(v_new):
                h_evt = _locate(v, h, target, tau, event)
                t, v = t + h_evt, _rk4_step(v, h_evt, target, tau)
                record(t, v, label)
                st["t"], st["v"] = t, v
                return True
            t, v = s, v_new
            record(t, v, label)
            if t > horizon:
                raise UnreachableThresholdError(
                    f"threshold not reached within {horizon} ns at {vdd} V")
        st["t"], st["v"] = t, v
        return False

    def crossed_access(x):
        return sgn * (x - v_access) >= 0.0

    def crossed_restore(x):
        return sgn * (x - v_restore) >= 0.0

    def settled(x):
        return abs(x - half) <= band

    t_cs = params.t_charge_share
    if t_cs < t_pre_issue:
        advance(t_cs, None, None, "sharing")
        st["v"] = charge_share(params, cell_stores_one, vdd)
        record(st["t"], st["v"], "sharing")
        markers["T1"] = st["t"]
        if crossed_access(st["v"]) or advance(t_pre_issue, rail, tau_s, "sensing",
                                              crossed_access):
            markers["T2"] = st["t"]
            advance(min(st["t"] + params.t_restore_delay, t_pre_issue), None, None,
                    "restoring")
            if advance(t_pre_issue, rail, tau_r, "restoring", crossed_restore):
                markers["T3"] = st["t"]
                advance(t_pre_issue, rail, tau_r, "restoring")
    else:
        advance(t_pre_issue, None, None, "sharing")
    phases[-1] = "precharging"
    advance(t_pre_issue + params.t_precharge_delay, None, None, "precharging")
    if settled(st["v"]) or advance(horizon, half, tau_p, "precharging", settled):
        markers["T4"] = st["t"]
    advance(st["t"] + tail, half, tau_p, "precharging")

    return BitlineTrajectory(np.asarray(times), np.asarray(volts), phases, markers,
                             vdd, t_pre_issue)


def closed_form_voltage(params: CircuitParams, vdd: float, cell_stores_one: bool,
                        t_pre_issue: float, times: Iterable[float]) -> np.ndarray:
    """Exact piecewise-exponential waveform sampled at ``times``."""
    tau_s, tau_r, tau_p = _taus(params, vdd)
    half = 0.5 * vdd
    rail = vdd if cell_stores_one else 0.0
    sgn = 1.0 if cell_stores_one else -1.0
    v0 = charge_share(params, cell_stores_one, vdd)
    v_access = half + sgn * (params.thresh_access - 0.5) * vdd
    t1 = params.t_charge_share
    if sgn * (v0 - v_access) >= 0:
        t2 = t1
    else:
        t2 = t1 + tau_s * math.log((rail - v0) / (rail - v_access))

    def relax(v_start, target, tau, elapsed):
        return target - (target - v_start) * math.exp(-elapsed / tau)

    def before_pre(t):
        if t < t1 or t1 >= t_pre_issue:
            return half
        if t <= t2:
            return relax(v0, rail, tau_s, t - t1)
        v2 = relax(v0, rail, tau_s, t2 - t1)
        t_r = t2 + params.t_restore_delay
        if t <= t_r:
            return v2
        return relax(v2, rail, tau_r, t - t_r)

    v_pre = before_pre(t_pre_issue)
    t_p = t_pre_issue + params.t_precharge_delay
    out = []
    for t in times:
        if t < t_pre_issue:
            out.append(before_pre(t))
        elif t <= t_p:
            out.append(v_pre)
        else:
            out.append(relax(v_pre, half, tau_p, t - t_p))
    return np.asarray(out)


# --- calibration -------------------------------------------------------------

_MARGIN = 1e-4


def _column_bounds(cycles: np.ndarray, guardband: float, t_ck: float):
    return (cycles - 1) * t_ck / guardband, cycles * t_ck / guardband


def _fit_column(base, volts, lo, hi, log_factor, v_nominal, vth_grid):
    """Fit ``base + offset + tau0 * log_factor * overdrive(v)`` into [lo, hi].

    For each candidate threshold the (offset, tau0) pair comes from an LP
    that minimises the total interval violation and, secondarily, maximises
    a common margin. Returns the candidate with the smallest rounded
    squared residual.
    """
    n = len(volts)
    c = np.concatenate([[0.0, 0.0, -1e-3], np.ones(n)])
    bnds = [(0.0, None), (1e-3, None), (_MARGIN, 0.5)] + [(0.0, None)] * n
    best = None
    for vth in vth_grid:
        g = log_factor * (v_nominal - vth) / (volts - vth)
        a_ub = np.zeros((2 * n, 3 + n))
        b_ub = np.zeros(2 * n)
        for i in range(n):
            # lo + margin - s <= base + off + tau*g
            a_ub[2 * i, :3] = [-1.0, -g[i], 1.0]
            a_ub[2 * i, 3 + i] = -1.0
            b_ub[2 * i] = base[i] - lo[i]
            # base + off + tau*g <= hi - margin + s
            a_ub[2 * i + 1, :3] = [1.0, g[i], 1.0]
            a_ub[2 * i + 1, 3 + i] = -1.0
            b_ub[2 * i + 1] = hi[i] - base[i]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bnds, method="highs")
        if not res.success:
            continue
        off, tau0 = float(res.x[0]), float(res.x[1])
        raw = base + off + tau0 * g
        miss = np.where(raw > hi, np.ceil((raw - hi) / (hi - lo + 1e-300)),
                        np.where(raw <= lo, -np.ceil((lo - raw) / (hi - lo) + 1e-12), 0.0))
        score = (float(np.sum(miss ** 2)), float(np.sum(res.x[3:])), -float(res.x[2]))
        if best is None or score < best[0]:
            best = (score, float(vth), off, tau0)
    return best


def calibrate(initial: CircuitParams, targets: Sequence, guardband: float = 1.375,
              t_ck: float = 1.25) -> CircuitParams:
    """Fit sense, restore and precharge parameters to a latency table.

    ``targets`` is a sequence of ``(volts, TimingParams)``. The residual is
    measured after guardband and clock rounding. Columns are fitted in a
    fixed order (sense, restore, precharge); each is a coarse threshold
    grid followed by a finer grid around the best point. Capacitances and
    threshold fractions are taken from ``initial``.

    Raises
    ------
    InvalidCalibrationInputError
        On empty targets, duplicate voltages or latencies that shrink as the
        voltage drops.
    """
    rows = list(targets)
    if not rows:
        raise InvalidCalibrationInputError("no calibration targets")
    volts = [float(v) for v, _ in rows]
    if len(set(volts)) != len(volts):
        raise InvalidCalibrationInputError("duplicate target voltages")
    rows.sort(key=lambda r: -float(r[0]))
    volts = np.array([float(v) for v, _ in rows])
    cols = {
        "rcd": np.array([round(tp.t_rcd / t_ck) for _, tp in rows], dtype=float),
        "ras": np.array([round(tp.t_ras / t_ck) for _, tp in rows], dtype=float),
        "rp": np.array([round(tp.t_rp / t_ck) for _, tp in rows], dtype=float),
    }
    for name, col in cols.items():
        if np.any(np.diff(col) < 0):
            raise InvalidCalibrationInputError(
                f"{name} target latencies must not shrink as voltage drops")
    if volts.min() <= 0.05:
        raise InvalidCalibrationInputError("target voltages out of range")

    vn = initial.v_nominal
    top = float(volts.min()) - 0.02
    coarse = np.round(np.arange(-1.0, top, 0.01), 6)

    def fit(base, cycles, log_factor):
        lo, hi = _column_bounds(cycles, guardband, t_ck)
        best = _fit_column(base, volts, lo, hi, log_factor, vn, coarse)
        if best is None:
            raise InvalidCalibrationInputError("calibration LP failed")
        centre = best[1]
        fine = np.round(np.arange(centre - 0.01, min(centre + 0.01, top) + 1e-12, 0.0005), 7)
        refined = _fit_column(base, volts, lo, hi, log_factor, vn, fine)
        if refined is not None and refined[0] < best[0]:
            best = refined
        return best

    zeros = np.zeros(len(volts))
    _, vth_s, t_cs, tau_s = fit(zeros, cols["rcd"], _sense_log(initial))
    sense = replace(initial, v_th_sense=vth_s, tau0_sense=tau_s, t_charge_share=t_cs)
    rcd_raw = np.array([t_cs + overdrive_tau(tau_s, vth_s, vn, v) * _sense_log(sense)
                        for v in volts])
    _, vth_r, d_r, tau_r = fit(rcd_raw, cols["ras"], _restore_log(initial))
    _, vth_p, d_p, tau_p = fit(zeros, cols["rp"], _precharge_log(initial))
    return replace(sense, v_th_restore=vth_r, tau0_restore=tau_r, t_restore_delay=d_r,
                   v_th_precharge=vth_p, tau0_precharge=tau_p, t_precharge_delay=d_p)


def calibration_residuals(params: CircuitParams, targets: Sequence,
                          guardband: float = 1.375, t_ck: float = 1.25):
    """Per-row (model - target) ns differences after guardband and rounding."""
    from .timing import apply_guardband

    out = []
    for v, tp in targets:
        got = apply_guardband(derive_min_latencies(params, v), guardband, t_ck)
        out.append((float(v), got.t_rcd - tp.t_rcd, got.t_rp - tp.t_rp,
                    got.t_ras - tp.t_ras))
    return out
