"""Figure rendering for CLI reports.

Every function writes one PNG and returns its path. The Agg backend is
forced and PNG metadata is stripped so identical inputs give identical
files.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def latency_table(rows, path):
    """``rows`` are ``(v, trcd, trp, tras)`` tuples in ns."""
    rows = sorted(rows)
    v = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, label in enumerate(("tRCD", "tRP", "tRAS"), start=1):
        ax.plot(v, [r[i] for r in rows], marker="o", label=label)
    ax.set_xlabel("array voltage (V)")
    ax.set_ylabel("latency (ns)")
    ax.invert_xaxis()
    ax.legend()
    return _save(fig, path)


def bitline(traj, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(traj.times, traj.voltages, lw=1)
    for name, t in sorted(traj.markers.items()):
        if t is not None:
            ax.axvline(t, color="grey", ls=":", lw=0.8)
            ax.annotate(name, (t, ax.get_ylim()[1]), fontsize=7, ha="center", va="top")
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("bitline voltage (V)")
    return _save(fig, path)


def sweep(rows, path):
    """``rows`` are dicts with the sweep CSV columns."""
    v = [r["v_array"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(v, [r["ws_loss_pct"] for r in rows], marker="o", label="WS loss")
    ax.plot(v, [r["dram_power_savings_pct"] for r in rows], marker="s", label="DRAM power savings")
    ax.plot(v, [r["system_energy_savings_pct"] for r in rows], marker="^",
            label="system energy savings")
    ax.axhline(0, color="black", lw=0.5)
    ax.set_xlabel("array voltage (V)")
    ax.set_ylabel("% vs 1.35 V")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    return _save(fig, path)


def policy_bars(rows, path):
    names = [r["policy"] for r in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for i, (key, label) in enumerate((("ws_loss_pct", "WS loss"),
                                      ("dram_power_savings_pct", "DRAM power savings"),
                                      ("system_energy_savings_pct", "system energy savings"))):
        ax.bar(x + (i - 1) * 0.25, [r[key] for r in rows], 0.25, label=label)
    ax.set_xticks(x, names)
    ax.set_ylabel("% vs fixed 1.35 V")
    ax.legend(fontsize=8)
    return _save(fig, path)


def decisions(decisions, path):
    cyc = [d.cycle for d in decisions]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.step(cyc, [d.v_array for d in decisions], where="post")
    ax.set_xlabel("CPU cycle")
    ax.set_ylabel("array voltage (V)")
    return _save(fig, path)


def heatmap(grid, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 3))
    im = ax.imshow(grid, aspect="auto", interpolation="nearest", cmap="viridis",
                   vmin=0.0, vmax=1.0)
    ax.set_xlabel("row")
    ax.set_ylabel("bank")
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, label="error probability")
    return _save(fig, path)


def beat_histogram(volts, fractions, path):
    """Stacked bars of beats with 1, 2 and >2 bit errors per voltage."""
    fr = np.asarray(fractions)
    x = np.arange(len(volts))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    bottom = np.zeros(len(volts))
    for col, label in ((1, "1 error"), (2, "2 errors"), (3, ">2 errors")):
        errs = fr[:, 1:].sum(axis=1)
        share = np.divide(fr[:, col], errs, out=np.zeros(len(volts)), where=errs > 0)
        ax.bar(x, share, bottom=bottom, label=label)
        bottom += share
    ax.set_xticks(x, [f"{v:.3f}" for v in volts], rotation=45)
    ax.set_xlabel("voltage (V)")
    ax.set_ylabel("fraction of erroneous beats")
    ax.legend(fontsize=8)
    return _save(fig, path)
