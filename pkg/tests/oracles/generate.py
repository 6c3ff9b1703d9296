"""Regenerate the frozen reference values in ``frozen.json``.

Each value is produced by a route that shares no code with the library:
scipy ODE integration for the bitline, scipy.stats for the F test and the
incomplete beta, numpy lstsq for least squares, plain loops for the error
model. Run from the repository root::

    python3 tests/oracles/generate.py
"""
import json
import math
import os

import numpy as np
from scipy import integrate, special, stats

HERE = os.path.dirname(os.path.abspath(__file__))

# calibrated circuit defaults, copied by value
CIRCUIT = dict(
    c_cell=24.0, c_bitline=144.0, v_nominal=1.35,
    v_th_sense=0.764, v_th_restore=0.728, v_th_precharge=0.799,
    tau0_sense=3.4118237065755324, tau0_restore=0.9979779058191892,
    tau0_precharge=0.49964733664230826, t_charge_share=7.390158465387824,
    t_restore_delay=13.752530771519053, t_precharge_delay=7.754807498488214,
    thresh_access=0.75, thresh_restore=0.98, thresh_precharge_band=0.02,
)
VOLTS = [1.35, 1.30, 1.25, 1.20, 1.15, 1.10, 1.05, 1.00, 0.95, 0.90]


def _tau(tau0, vth, vdd, p=CIRCUIT):
    return tau0 * (p["v_nominal"] - vth) / (vdd - vth)


def _crossing(v0, target, tau, level, direction):
    """Integrate dv/dt = (target - v)/tau from v0 until v hits ``level``."""
    def ev(t, y):
        return y[0] - level
    ev.terminal = True
    ev.direction = direction
    sol = integrate.solve_ivp(lambda t, y: [(target - y[0]) / tau], (0.0, 500.0), [v0],
                              events=ev, rtol=1e-12, atol=1e-14, method="DOP853")
    return float(sol.t_events[0][0])


def bitline_raw(vdd, p=CIRCUIT):
    half = vdd / 2
    ratio = p["c_cell"] / (p["c_cell"] + p["c_bitline"])
    v0 = half + vdd * ratio / 2
    ts = _tau(p["tau0_sense"], p["v_th_sense"], vdd)
    tr = _tau(p["tau0_restore"], p["v_th_restore"], vdd)
    tp = _tau(p["tau0_precharge"], p["v_th_precharge"], vdd)
    v_acc = p["thresh_access"] * vdd
    t_rcd = p["t_charge_share"] + _crossing(v0, vdd, ts, v_acc, 1)
    t_ras = t_rcd + p["t_restore_delay"] + _crossing(v_acc, vdd, tr, p["thresh_restore"] * vdd, 1)
    v_pre = p["thresh_restore"] * vdd
    band = p["thresh_precharge_band"] * half
    t_rp = p["t_precharge_delay"] + _crossing(v_pre, half, tp, half + band, -1)
    return t_rcd, t_ras, t_rp


def anova_sets():
    rng = np.random.default_rng(20240607)
    sets = [[[1, 2, 3], [2, 3, 4], [3, 4, 5]]]
    for i in range(9):
        k = 2 + i % 4
        groups = []
        for g in range(k):
            n = 3 + int(rng.integers(0, 12))
            shift = 0.4 * g * (i % 3)
            groups.append([round(float(x), 6) for x in rng.normal(shift, 1.0 + 0.3 * g, n)])
        sets.append(groups)
    out = []
    for groups in sets:
        f, p = stats.f_oneway(*groups)
        out.append({"groups": groups, "f": float(f), "p": float(p)})
    return out


def betainc_cases():
    cases = []
    for a in (0.5, 1.0, 2.5, 7.0, 30.0):
        for b in (0.5, 1.5, 4.0, 45.0):
            for x in (0.001, 0.2, 0.5, 0.77, 0.999):
                cases.append([a, b, x, float(special.betainc(a, b, x))])
    return cases


def ols_case():
    rng = np.random.default_rng(7)
    x = np.column_stack([rng.uniform(50, 80, 40), rng.uniform(0, 40, 40), rng.uniform(0, 1, 40)])
    y = 3.0 + 0.7 * x[:, 0] - 0.2 * x[:, 1] + 9.0 * x[:, 2] + rng.normal(0, 1.0, 40)
    design = np.column_stack([np.ones(40), x])
    w, *_ = np.linalg.lstsq(design, y, rcond=None)
    return {"x": x.round(9).tolist(), "y": y.round(9).tolist(), "w": w.tolist()}


def bits_pmf(mean=4.0):
    q = (mean - 1) / 63
    return [float(stats.binom.pmf(j, 63, q)) for j in range(64)]


def vendor_b_fraction(v):
    """Mean line error probability for vendor B at ``v``, 10/10 ns, by loops."""
    vmin, floor, row_floor = 1.125, 1.0, 0.05
    clusters = [(512, 64, 1.0), (2900, 128, 0.6)]
    rate = min(1.0, 1e-6 * math.exp(math.log(10) * (vmin - v) / 0.025))
    if v >= vmin - 1e-9:
        return 0.0
    total = 0.0
    for bank in range(8):
        for row in range(4096):
            if v < floor - 1e-9:
                w = 1.0
            else:
                w = row_floor
                for c, width, weight in clusters:
                    if abs(row - c) <= width:
                        w = max(w, weight)
            total += min(1.0, rate * w)
    return total / (8 * 4096)


def main():
    data = {
        "bitline_raw": {f"{v:.2f}": bitline_raw(v) for v in VOLTS},
        "anova": anova_sets(),
        "betainc": betainc_cases(),
        "ols": ols_case(),
        "bits_pmf_mean4": bits_pmf(),
        "vendor_b_fraction": {f"{v:.3f}": vendor_b_fraction(v)
                              for v in (1.15, 1.1, 1.05, 1.0, 0.975)},
    }
    with open(os.path.join(HERE, "frozen.json"), "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
