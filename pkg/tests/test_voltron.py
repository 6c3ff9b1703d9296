import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from voltsim.errors import InvalidParameterError, SingularFitError
from voltsim.timing import V_NOMINAL, lookup, published_table
from voltsim.voltron import (DEFAULT_COEFFS, MemDVFSPolicy, PolicyDecision,
                             PredictorCoefficients, VoltronBLPolicy, WorkloadProfile, _ols,
                             fit_predictor, make_policy, memdvfs_select, predict_loss,
                             select_array_voltage, slow_bank_count, split_sizes,
                             synthetic_samples, write_decision_log)

TABLE = published_table()


def test_predict_loss_hand_values():
    # low branch: -30.09 + 0.59*78.75 + 0.01*5 + 19.24*0.3
    assert predict_loss(DEFAULT_COEFFS, 78.75, 5.0, 0.3) == pytest.approx(22.1945, abs=1e-9)
    # high branch: -50.04 + 1.05*60 - 0.01*20 + 15.27*0.5
    assert predict_loss(DEFAULT_COEFFS, 60.0, 20.0, 0.5) == pytest.approx(20.395, abs=1e-9)
    # MPKI exactly at the threshold takes the high branch
    assert predict_loss(DEFAULT_COEFFS, 60.0, 15.0, 0.0) == pytest.approx(12.81, abs=1e-9)


def test_predict_loss_clamps():
    assert predict_loss(DEFAULT_COEFFS, 10.0, 1.0, 0.0) == 0.0
    big = PredictorCoefficients(high=(500.0, 0.0, 0.0, 0.0))
    assert predict_loss(big, 50.0, 40.0, 0.0) == 100.0


def test_predict_loss_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        predict_loss(DEFAULT_COEFFS, 0.0, 1.0, 0.1)
    with pytest.raises(InvalidParameterError):
        predict_loss(DEFAULT_COEFFS, 50.0, -1.0, 0.1)
    with pytest.raises(InvalidParameterError):
        predict_loss(DEFAULT_COEFFS, 50.0, 1.0, 1.1)
    with pytest.raises(InvalidParameterError):
        PredictorCoefficients(low=(1.0, 2.0))


@given(st.floats(30.0, 120.0), st.floats(0.0, 80.0), st.floats(0.0, 1.0))
def test_predict_loss_in_range(lat, mpki, stall):
    assert 0.0 <= predict_loss(DEFAULT_COEFFS, lat, mpki, stall) <= 100.0


def test_selection_extremes():
    lossy = WorkloadProfile(30.0, 0.9)
    d = select_array_voltage(0.0, lossy, TABLE)
    assert d.v_array == V_NOMINAL
    d = select_array_voltage(100.0, lossy, TABLE)
    assert d.v_array == 0.90
    # low-MPKI profile at 5%: 1.10 V (tRAS+tRP = 56.25 ns) predicts 4.06%
    d = select_array_voltage(5.0, WorkloadProfile(0.5, 0.05), TABLE)
    assert d.v_array == 1.10 and d.predicted_loss == pytest.approx(4.0645, abs=1e-9)
    with pytest.raises(InvalidParameterError):
        select_array_voltage(-1.0, lossy, TABLE)


def _brute(target, prof):
    ok = [r.v_array for r in TABLE if r.v_array < V_NOMINAL
          and predict_loss(DEFAULT_COEFFS, r.timings.latency, prof.mpki,
                           prof.stall_fraction) <= target]
    return min(ok) if ok else V_NOMINAL


@given(st.floats(0.0, 40.0), st.floats(0.0, 60.0), st.floats(0.0, 1.0))
def test_selection_matches_brute_force(target, mpki, stall):
    prof = WorkloadProfile(mpki, stall)
    assert select_array_voltage(target, prof, TABLE).v_array == _brute(target, prof)


def test_memdvfs_thresholds():
    assert memdvfs_select(0.41).channel_rate == 1600
    assert memdvfs_select(0.40).channel_rate == 1333
    assert memdvfs_select(0.16).v_peripheral == 1.30
    step = memdvfs_select(0.15)
    assert (step.channel_rate, step.v_array, step.v_peripheral) == (1066, 1.25, 1.25)
    with pytest.raises(InvalidParameterError):
        memdvfs_select(0.5, thresholds=(0.1, 0.2))


def test_slow_bank_count():
    got = [slow_bank_count(v) for v in TABLE.voltages]
    assert got == [0, 1, 2, 3, 4, 5, 6, 7, 8, 8]
    with pytest.raises(InvalidParameterError):
        slow_bank_count(0.5)


def test_bank_split_decision():
    pol = VoltronBLPolicy(TABLE, op_point=lookup(TABLE, 1.25))
    d = pol.initial()
    t = d.bank_timings(8)
    slow, fast = lookup(TABLE, 1.25).timings, lookup(TABLE, 1.35).timings
    assert t == [slow, slow] + [fast] * 6
    with pytest.raises(InvalidParameterError):
        PolicyDecision(lookup(TABLE, 1.0), slow_banks=9)


def test_make_policy():
    assert isinstance(make_policy("memdvfs"), MemDVFSPolicy)
    with pytest.raises(InvalidParameterError):
        make_policy("turbo")
    with pytest.raises(InvalidParameterError):
        make_policy("voltron", target_loss=-2)


def test_split_sizes():
    assert split_sizes(10) == (7, 3)
    assert split_sizes(11) == (7, 4)
    assert split_sizes(100) == (70, 30)


def test_ols_matches_lstsq(frozen):
    case = frozen["ols"]
    x = np.column_stack([np.ones(len(case["y"])), np.asarray(case["x"])])
    assert np.allclose(_ols(x, np.asarray(case["y"])), case["w"], atol=1e-9)


def test_ols_singular():
    x = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(SingularFitError):
        _ols(x, np.arange(10.0))


def test_fit_recovers_exact_coefficients():
    rep = fit_predictor(synthetic_samples(DEFAULT_COEFFS, 300, seed=11))
    for got, want in ((rep.coefficients.low, DEFAULT_COEFFS.low),
                      (rep.coefficients.high, DEFAULT_COEFFS.high)):
        assert np.allclose(got, want, atol=1e-8, rtol=0)
    assert rep.rmse < 1e-8
    assert rep.n_train + rep.n_test == 300


def test_fit_needs_enough_samples():
    with pytest.raises(InvalidParameterError):
        fit_predictor(synthetic_samples(DEFAULT_COEFFS, 10))
    with pytest.raises(InvalidParameterError):
        fit_predictor([[1.0, 2.0]])


def test_fit_is_seed_deterministic():
    s = synthetic_samples(DEFAULT_COEFFS, 200, noise=1.0, seed=2)
    assert fit_predictor(s, split_seed=4).as_dict() == fit_predictor(s, split_seed=4).as_dict()


def test_decision_log_csv():
    ds = [PolicyDecision(lookup(TABLE, 1.1), 3.25, 5, 4000, "voltron_bl")]
    buf = io.StringIO()
    write_decision_log(ds, buf)
    assert buf.getvalue().splitlines() == [
        "cycle,policy,v_array,freq,predicted_loss,slow_banks",
        "4000,voltron_bl,1.10,1600,3.250000,5"]
