"""The twelve acceptance criteria, one test each.

Every test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""
import io
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from voltsim import errmodel as em
from voltsim.cli import main
from voltsim.memsim import SystemConfig, TraceRecord, AddressMapper, run_simulation, workload
from voltsim.power import EnergyReport, PowerConfig, Segment, account
from voltsim.timing import (DEFAULT_VOLTAGES, build_latency_table, lookup, published_table,
                            write_table_csv)
from voltsim.voltron import (DEFAULT_COEFFS, VoltronBLPolicy, WorkloadProfile, fit_predictor,
                             predict_loss, select_array_voltage, slow_bank_count,
                             synthetic_samples)

TABLE = published_table()


def report(n, name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {name}" + (f" [{detail}]" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# --- 1 --------------------------------------------------------------------------------

EXPECTED_TABLE_CSV = """\
v_array,trcd_ns,trp_ns,tras_ns,trcd_cyc,trp_cyc,tras_cyc
1.35,13.75,13.75,36.25,11,11,29
1.30,13.75,13.75,36.25,11,11,29
1.25,13.75,15.00,36.25,11,12,29
1.20,13.75,15.00,37.50,11,12,30
1.15,15.00,15.00,37.50,12,12,30
1.10,15.00,16.25,40.00,12,13,32
1.05,16.25,17.50,41.25,13,14,33
1.00,17.50,18.75,45.00,14,15,36
0.95,18.75,21.25,48.75,15,17,39
0.90,21.25,26.25,52.50,17,21,42
"""


def test_criterion_01_latency_table():
    t0 = time.perf_counter()
    buf = io.StringIO()
    write_table_csv(build_latency_table("table"), buf)
    exact = buf.getvalue() == EXPECTED_TABLE_CSV
    model = build_latency_table("model")
    elapsed = time.perf_counter() - t0
    worst = 0.0
    nominal_exact = True
    for row, ref in zip(model, TABLE):
        a, b = row.timings, ref.timings
        diffs = [abs(a.t_rcd - b.t_rcd), abs(a.t_rp - b.t_rp), abs(a.t_ras - b.t_ras)]
        worst = max(worst, *diffs)
        if row.v_array >= 1.30 and max(diffs) != 0:
            nominal_exact = False
    ok = exact and worst <= 1.25 + 1e-9 and nominal_exact and elapsed < 1.0
    report(1, "latency table", ok,
           f"table exact={exact}, model worst={worst:.2f} ns, exact at 1.35/1.30="
           f"{nominal_exact}, {elapsed:.3f} s")


# --- 2 --------------------------------------------------------------------------------

def _eq1(lat, mpki, stall):
    if mpki < 15:
        raw = -30.09 + 0.59 * lat + 0.01 * mpki + 19.24 * stall
    else:
        raw = -50.04 + 1.05 * lat - 0.01 * mpki + 15.27 * stall
    return min(100.0, max(0.0, raw))


def test_criterion_02_predictor():
    lats = [50.0, 52.5, 56.25, 63.75, 78.75]
    pts = [(lat, mpki, stall) for lat in lats
           for mpki, stall in ((2.0, 0.1), (14.99, 0.6), (15.0, 0.4), (35.0, 0.9))]
    assert len(pts) == 20
    err = max(abs(predict_loss(DEFAULT_COEFFS, *p) - _eq1(*p)) for p in pts)
    branches = {p[1] < 15 for p in pts}
    report(2, "predictor formula", err <= 1e-9 and branches == {True, False},
           f"max error {err:.2e} over {len(pts)} points")


# --- 3 --------------------------------------------------------------------------------

def test_criterion_03_selection_oracle():
    rng = np.random.default_rng(3)
    rows = [(r.v_array, r.timings.latency) for r in TABLE if r.v_array < 1.35]
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        target = float(rng.uniform(0, 30))
        prof = WorkloadProfile(float(rng.uniform(0, 50)), float(rng.uniform(0, 1)))
        ok = [v for v, lat in rows
              if predict_loss(DEFAULT_COEFFS, lat, prof.mpki, prof.stall_fraction) <= target]
        want = min(ok) if ok else 1.35
        mismatches += select_array_voltage(target, prof, TABLE).v_array != want
    elapsed = time.perf_counter() - t0
    report(3, "array-voltage selection", mismatches == 0 and elapsed < 1.0,
           f"{mismatches} mismatches in 1000 draws, {elapsed:.3f} s")


# --- 4 --------------------------------------------------------------------------------

def test_criterion_04_fit():
    rep = fit_predictor(synthetic_samples(DEFAULT_COEFFS, 500, seed=0))
    coef_err = max(np.max(np.abs(np.subtract(rep.coefficients.low, DEFAULT_COEFFS.low))),
                   np.max(np.abs(np.subtract(rep.coefficients.high, DEFAULT_COEFFS.high))))
    sigma = 2.5
    rmses = [fit_predictor(synthetic_samples(DEFAULT_COEFFS, 500, sigma, s), split_seed=s).rmse
             for s in range(20)]
    in_band = all(0.8 * sigma <= r <= 1.2 * sigma for r in rmses)
    ok = coef_err <= 1e-8 and rep.rmse <= 1e-8 and in_band
    report(4, "predictor fit", ok,
           f"coef err {coef_err:.1e}, noise-free rmse {rep.rmse:.1e}, noisy rmse "
           f"{min(rmses):.2f}..{max(rmses):.2f} (mean {np.mean(rmses):.2f})")


# --- 5 --------------------------------------------------------------------------------

def test_criterion_05_single_request_latency():
    cfg = replace(SystemConfig(), cores=1)
    mapper = AddressMapper()
    a = mapper.encode(bank=2, row=1234, column=0)
    b = mapper.encode(bank=2, row=1234, column=9)
    bad = []
    for v in DEFAULT_VOLTAGES:
        tp = lookup(TABLE, v).timings
        stats, _ = run_simulation(cfg, [[TraceRecord(0, a, False), TraceRecord(3000, b, False)]],
                                  "fixed", lookup(TABLE, v))
        miss, hit = stats.read_latencies[0]
        if miss != tp.rcd + tp.cl + 4 or hit != tp.cl + 4 or stats.violations:
            bad.append(v)
    report(5, "closed-form read latency", not bad,
           f"{len(DEFAULT_VOLTAGES) - len(bad)}/{len(DEFAULT_VOLTAGES)} voltages exact")


# --- 6 --------------------------------------------------------------------------------

class _FixedSplit(VoltronBLPolicy):
    """Voltron+BL held at 1.25 V so two banks always run slow."""

    def decide(self, cycle, profile, bandwidth_util):
        return self._split(self.op_point, 0.0, cycle)


def test_criterion_06_audit_long_run():
    cfg = SystemConfig()
    traces = workload("random", cores=4, n_requests=40000, seed=3, mean_gap=1000)
    split = _FixedSplit(TABLE, op_point=lookup(TABLE, 1.25))
    assert split.initial().slow_banks == slow_bank_count(1.25) == 2
    runs = {}
    for name, pol in (("fixed", "fixed"), ("voltron", "voltron"), ("voltron_bl", "voltron_bl"),
                      ("memdvfs", "memdvfs"), ("bl@1.25", split)):
        stats, _ = run_simulation(cfg, traces, pol, keep_log=False, audit=True,
                                  max_cycles=10_000_000)
        runs[name] = (stats.cycles, len(stats.violations), sum(stats.commands.values()),
                      {d.slow_banks for d in stats.decisions})
    ok = all(c == 10_000_000 and v == 0 and n > 0 for c, v, n, _ in runs.values())
    ok = ok and runs["bl@1.25"][3] == {2}
    report(6, "timing audit, 10M cycles", ok,
           ", ".join(f"{k}: {v[1]} violations/{v[2]} cmds" for k, v in runs.items()))


# --- 7 --------------------------------------------------------------------------------

def test_criterion_07_power_scaling():
    cfg = replace(SystemConfig(), cores=2, interval_cycles=10_000)
    traces = workload("memory", cores=2, n_requests=1500, seed=6)
    stats, base = run_simulation(cfg, traces, "fixed", keep_log=False, audit=False)
    low = lookup(TABLE, 0.90)
    segs = [Segment(s.start_ps, s.end_ps, low, s.counts, s.core_active_ps, s.n_cores)
            for s in stats.segments]
    scaled = account(stats, segs)
    ratio = scaled.dram_array_dynamic / base.dram_array_dynamic
    ratio_ok = abs(ratio - (0.90 / 1.35) ** 2) <= 1e-12 and abs(ratio - 0.4444) < 1e-4
    peri = []
    for pol in ("voltron", "voltron_bl"):
        s, e = run_simulation(cfg, traces, pol, target_loss=30.0, keep_log=False, audit=False)
        moved = any(d.v_array < 1.35 for d in s.decisions)
        peri.append(moved and s.commands["RD"] == stats.commands["RD"]
                    and s.commands["WR"] == stats.commands["WR"]
                    and math.isclose(e.dram_peripheral_dynamic, base.dram_peripheral_dynamic,
                                     rel_tol=1e-12))
    report(7, "power scaling", ratio_ok and all(peri),
           f"array ratio {ratio:.15f}, peripheral unchanged under voltron/voltron_bl={peri}")


# --- 8 --------------------------------------------------------------------------------

def test_criterion_08_memdvfs_saturated():
    cfg = replace(SystemConfig(), interval_cycles=20_000)
    traces = workload("memory", cores=4, n_requests=3000, seed=8, mean_gap=0)
    fixed, _ = run_simulation(cfg, traces, "fixed", keep_log=False, audit=False)
    dvfs, _ = run_simulation(cfg, traces, "memdvfs", keep_log=False, audit=True)
    rates = {d.op_point.channel_rate for d in dvfs.decisions}
    loss = 100.0 * (dvfs.cycles - fixed.cycles) / fixed.cycles
    ok = rates == {1600} and dvfs.cycles == fixed.cycles and not dvfs.violations
    report(8, "MemDVFS on saturated bandwidth", ok,
           f"{len(dvfs.decisions)} decisions at {sorted(rates)} MT/s, loss {loss:.2f}%")


# --- 9 --------------------------------------------------------------------------------

def test_criterion_09_directional_sweep():
    t0 = time.perf_counter()
    cfg = SystemConfig()
    traces = workload("memory")
    alone = [run_simulation(replace(cfg, cores=1), [tr], keep_log=False, audit=False)[0].ipc[0]
             for tr in traces]
    res = {}
    for v in DEFAULT_VOLTAGES:
        s, e = run_simulation(cfg, traces, "fixed", lookup(TABLE, v), ipc_alone=alone,
                              keep_log=False, audit=False)
        res[v] = (s.weighted_speedup, e.dram_power, e.total)
    b = res[1.35]
    loss = [100 * (1 - res[v][0] / b[0]) for v in DEFAULT_VOLTAGES]
    dram = [100 * (1 - res[v][1] / b[1]) for v in DEFAULT_VOLTAGES]
    sysv = {v: 100 * (1 - res[v][2] / b[2]) for v in DEFAULT_VOLTAGES}
    elapsed = time.perf_counter() - t0
    mono_loss = all(y >= x for x, y in zip(loss, loss[1:]))
    mono_dram = all(y >= x for x, y in zip(dram, dram[1:]))
    shape = sysv[0.90] < sysv[1.00]
    ok = mono_loss and mono_dram and shape and elapsed < 300
    report(9, "directional sweep", ok,
           f"WS loss 0->{loss[-1]:.1f}% monotone={mono_loss}, DRAM savings monotone="
           f"{mono_dram}, system savings 1.00V {sysv[1.00]:.2f}% vs 0.90V {sysv[0.90]:.2f}%, "
           f"{elapsed:.0f} s")


# --- 10 -------------------------------------------------------------------------------

def test_criterion_10_characterization():
    found, clean, tails = {}, True, True
    for name in em.BUNDLED:
        p = em.bundled_profile(name)
        found[name] = em.find_vmin(p)
        v = 1.35
        while v >= p.v_min - 1e-9:
            for pat in em.ALL_PATTERNS:
                clean &= em.voltage_test(p, v, pattern=pat, rounds=30).erroneous_lines == 0
            v = round(v - em.STEP, 6)
        grid = [round(1.35 - em.STEP * i, 6) for i in range(19)]
        tail = [em.expected_beat_fractions(p, x)[3] for x in grid]
        tails &= all(b >= a for a, b in zip(tail, tail[1:]))
    vmins = all(math.isclose(found[n], em.bundled_profile(n).v_min) for n in em.BUNDLED)
    report(10, "characterization", vmins and clean and tails and found["vendor_c"] == 1.30,
           f"Vmin {found}, error-free at/above Vmin={clean}, >2-error beats monotone={tails}")


# --- 11 -------------------------------------------------------------------------------

def test_criterion_11_anova(frozen):
    p_err = max(abs(em.anova_oneway(c["groups"])[1] - c["p"]) for c in frozen["anova"])
    rng = np.random.default_rng(11)
    t_err = 0.0
    for _ in range(200):
        x = rng.normal(0, 1, int(rng.integers(2, 30)))
        y = rng.normal(rng.uniform(-1, 1), 1, int(rng.integers(2, 30)))
        f, _ = em.anova_oneway([x, y])
        sp2 = (((x - x.mean()) ** 2).sum() + ((y - y.mean()) ** 2).sum()) / (len(x) + len(y) - 2)
        t = (x.mean() - y.mean()) / math.sqrt(sp2 * (1 / len(x) + 1 / len(y)))
        t_err = max(t_err, abs(f - t * t) / max(1.0, t * t))
    ok = len(frozen["anova"]) == 10 and p_err <= 1e-6 and t_err <= 1e-9
    report(11, "one-way ANOVA", ok, f"max p error {p_err:.1e}, max |F - t^2| {t_err:.1e}")


# --- 12 -------------------------------------------------------------------------------

COMMANDS = [
    ["latency-table", "--source", "model", "--figures"],
    ["bitline", "--vdd", "1.05", "--figures"],
    ["simulate", "--requests", "500", "--policy", "voltron_bl", "--command-log", "--figures"],
    ["sweep", "--requests", "300", "--voltages", "1.35,1.1,0.9", "--figures"],
    ["characterize", "--profile", "vendor_b", "--rounds", "5", "--figures"],
    ["anova", "--profile", "vendor_a", "--rounds", "5"],
    ["fit-predictor", "--synthetic", "300", "--noise", "2.5"],
]


def _snapshot(d):
    out = {}
    for name in sorted(os.listdir(d)):
        with open(os.path.join(d, name), "rb") as fh:
            out[name] = fh.read()
    return out


def test_criterion_12_determinism(tmp_path):
    same = {}
    for i, argv in enumerate(COMMANDS):
        outs = []
        for rep in range(2):
            d = tmp_path / f"{i}_{rep}"
            rc = main(argv + ["--seed", "21", "--out-dir", str(d)])
            outs.append((rc, _snapshot(d)))
        same[argv[0]] = outs[0] == outs[1] and outs[0][0] == 0 and bool(outs[0][1])
    report(12, "byte-identical reruns", all(same.values()),
           ", ".join(f"{k}={'ok' if v else 'DIFF'}" for k, v in same.items()))
