import io
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from voltsim.errors import AccountingError, InvalidParameterError
from voltsim.memsim import SystemConfig, run_simulation, workload
from voltsim.power import (EnergyReport, PowerConfig, Segment, account, scale_array_energy,
                           scale_peripheral_power, segment_energy)
from voltsim.timing import lookup, memdvfs_point, published_table

CFG = PowerConfig()
TABLE = published_table()
COUNTS = {"ACT": 100, "PRE": 100, "RD": 300, "WR": 50, "REF": 2}


def test_array_energy_is_quadratic():
    assert scale_array_energy(9.0, 0.9) == pytest.approx(4.0, rel=1e-15)
    with pytest.raises(InvalidParameterError):
        scale_array_energy(1.0, 0.0)


def test_peripheral_power_scaling():
    assert scale_peripheral_power(10.0, 1.35, 1600) == 10.0
    assert scale_peripheral_power(10.0, 1.35, 1066) == pytest.approx(10.0 * 1066 / 1600)
    assert scale_peripheral_power(10.0, 1.25, 1600) == pytest.approx(10.0 * (1.25 / 1.35) ** 2)
    with pytest.raises(InvalidParameterError):
        scale_peripheral_power(10.0, 1.35, 2133)


def test_negative_config_rejected():
    with pytest.raises(InvalidParameterError):
        PowerConfig(e_act_pre=-1.0)


def test_segment_energy_by_hand():
    op = lookup(TABLE, 1.35)
    seg = Segment(0, 1_000_000, op, COUNTS, 1_500_000, 2)
    e = segment_energy(seg, CFG)
    arr = (100 * CFG.e_act_pre + 300 * CFG.e_rd_array + 50 * CFG.e_wr_array
           + 2 * CFG.e_ref) * 1e-9
    peri = (300 * CFG.e_rd_io + 50 * CFG.e_wr_io) * 1e-9
    static = (CFG.p_static_array + CFG.p_static_peri) * 1e-3 * 16 * 1e-6
    cpu = 1.5e-6 * CFG.cpu_active_w + 0.5e-6 * CFG.cpu_idle_w
    assert e.dram_array_dynamic == pytest.approx(arr, rel=1e-12)
    assert e.dram_peripheral_dynamic == pytest.approx(peri, rel=1e-12)
    assert e.dram_static == pytest.approx(static, rel=1e-12)
    assert e.cpu == pytest.approx(cpu, rel=1e-12)
    assert e.runtime_s == pytest.approx(1e-6)


def test_array_ratio_for_identical_counts():
    lo = segment_energy(Segment(0, 10**6, lookup(TABLE, 0.9), COUNTS, 0, 1), CFG)
    hi = segment_energy(Segment(0, 10**6, lookup(TABLE, 1.35), COUNTS, 0, 1), CFG)
    assert lo.dram_array_dynamic / hi.dram_array_dynamic == pytest.approx(0.4444444444444444,
                                                                          abs=1e-12)
    assert lo.dram_peripheral_dynamic == hi.dram_peripheral_dynamic
    assert lo.dram_peripheral_static == hi.dram_peripheral_static


def test_memdvfs_point_scales_peripheral():
    op = memdvfs_point(TABLE, 1066, 1.25)
    lo = segment_energy(Segment(0, 10**6, op, COUNTS, 0, 1), CFG)
    hi = segment_energy(Segment(0, 10**6, lookup(TABLE, 1.35), COUNTS, 0, 1), CFG)
    ratio = (1.25 / 1.35) ** 2
    assert lo.dram_peripheral_dynamic / hi.dram_peripheral_dynamic == pytest.approx(ratio)
    assert lo.dram_peripheral_static / hi.dram_peripheral_static == pytest.approx(
        ratio * 1066 / 1600)


def test_account_detects_gaps():
    class S:
        runtime_ps = 2000
        cores = []

    op = lookup(TABLE, 1.35)
    segs = [Segment(0, 1000, op, {}, 0, 1), Segment(1500, 2000, op, {}, 0, 1)]
    with pytest.raises(AccountingError):
        account(S(), segs)
    with pytest.raises(AccountingError):
        account(S(), segs[:1])
    total = account(S(), [segs[0], Segment(1000, 2000, op, {}, 0, 1)])
    assert total.runtime_s == pytest.approx(2e-9)


def test_report_csv_and_json():
    e = EnergyReport(1e-3, 2e-3, 3e-3, 4e-3, 5e-3, 0.5, 1000)
    buf = io.StringIO()
    e.to_csv(buf)
    rows = [line.split(",") for line in buf.getvalue().splitlines()]
    assert rows[0] == ["component", "energy_j", "power_w"]
    parsed = {r[0]: (float(r[1]), float(r[2])) for r in rows[1:]}
    assert parsed["system_total"] == (e.total, e.total / 0.5)
    assert parsed["dram_total"][0] == e.dram
    assert e.perf_per_watt == 1000 / e.total
    buf = io.StringIO()
    e.to_json(buf)
    assert '"system_total"' in buf.getvalue()


@given(st.floats(0.9, 1.35), st.integers(0, 1000), st.integers(0, 1000))
def test_energy_non_negative_and_additive(v, acts, rds):
    op = lookup(TABLE, min(TABLE.voltages, key=lambda x: abs(x - v)))
    counts = {"ACT": acts, "RD": rds}
    a = segment_energy(Segment(0, 500, op, counts, 100, 1), CFG)
    b = segment_energy(Segment(500, 900, op, counts, 100, 1), CFG)
    s = a + b
    assert min(a.dram_array_dynamic, a.dram_static, a.cpu) >= 0
    assert s.total == pytest.approx(a.total + b.total)


def test_default_energy_split():
    """Calibration targets for the shipped defaults, on short runs."""
    sysc = SystemConfig()
    sat = workload("memory", n_requests=3000, seed=7, mean_gap=0)
    _, e = run_simulation(sysc, sat, "fixed", keep_log=False, audit=False)
    assert 0.50 <= e.dram / e.total <= 0.56
    comp = workload("compute", n_requests=300, seed=7)
    _, e = run_simulation(sysc, comp, "fixed", keep_log=False, audit=False)
    assert 0.77 <= e.cpu / e.total <= 0.83


def test_voltron_keeps_peripheral_dynamic_energy():
    sysc = replace(SystemConfig(), cores=2, interval_cycles=10_000)
    tr = workload("memory", cores=2, n_requests=800, seed=2)
    s_fixed, e_fixed = run_simulation(sysc, tr, "fixed", keep_log=False, audit=False)
    s_v, e_v = run_simulation(sysc, tr, "voltron", target_loss=30.0, keep_log=False,
                              audit=False)
    assert any(d.v_array < 1.35 for d in s_v.decisions)
    assert s_fixed.commands["RD"] == s_v.commands["RD"]
    assert e_v.dram_peripheral_dynamic == pytest.approx(e_fixed.dram_peripheral_dynamic,
                                                        rel=1e-12)
