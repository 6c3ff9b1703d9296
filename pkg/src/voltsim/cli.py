"""Command-line front end.

Every subcommand writes its reports under ``--out-dir`` (CSV and JSON,
plus PNG figures with ``--figures``). Exit status is 0 on success, 1 on
a runtime failure and 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from . import errmodel as em
from .circuit import calibrate, derive_min_latencies, simulate_bitline
from .config import RunConfig, load_config
from .errors import (ConfigError, NoSuchOperatingPointError, ProfileInvalidError,
                     TraceParseError, UndefinedStatisticError, VoltsimError)
from .memsim import load_trace, run_simulation, workload
from .memsim.trace import WORKLOADS
from .timing import (DEFAULT_VOLTAGES, V_NOMINAL, apply_guardband, build_latency_table,
                     iter_rows, lookup, published_table, write_table_csv)
from .voltron import (DEFAULT_COEFFS, POLICIES, fit_predictor, synthetic_samples,
                      write_decision_log)

SWEEP_HEADER = ["v_array", "ws_loss_pct", "dram_power_savings_pct",
                "system_energy_savings_pct"]


class UsageError(Exception):
    pass


# --- helpers --------------------------------------------------------------------------

def _seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("VOLTSIM_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"VOLTSIM_SEED must be an integer, got {env!r}")
    return cfg.seed


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    if not os.path.isfile(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    return load_config(args.config)


def _out_dir(args, cfg: RunConfig) -> str:
    out = args.out_dir if args.out_dir is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def _plots():
    from . import plots
    return plots


def _traces(args, cfg: RunConfig, seed: int):
    paths = list(args.trace or cfg.traces)
    if paths:
        for p in paths:
            if not os.path.isfile(p):
                raise ConfigError(f"trace file not found: {p}")
        return [load_trace(p) for p in paths]
    return workload(args.workload, cfg.system.cores, args.requests, seed=seed)


def _alone_ipc(cfg: RunConfig, traces, table, max_cycles):
    out = []
    for tr in traces:
        stats, _ = run_simulation(replace(cfg.system, cores=1), [tr], "fixed", table=table,
                                  power=cfg.power, keep_log=False, audit=False,
                                  max_cycles=max_cycles)
        out.append(stats.ipc[0])
    return out


def _write_command_log(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_ps", "channel", "bank", "cmd", "row"])
        for t, ch, bank, cmd, row, _ in log:
            w.writerow([t, ch, bank, cmd, "" if row is None else row])


# --- subcommands ------------------------------------------------------------------------

def cmd_latency_table(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    source = args.source or cfg.timing_source
    params = cfg.circuit()
    if args.calibrate:
        targets = [(r.v_array, r.timings) for r in published_table()]
        params = calibrate(params, targets)
        _write_json(os.path.join(out, "circuit_params.json"), asdict(params))
    if cfg.table_path is not None and args.source is None:
        table = cfg.latency_table()
    else:
        table = build_latency_table(source, params=params)
    path = os.path.join(out, "latency_table.csv")
    with open(path, "w", newline="") as fh:
        write_table_csv(table, fh)
    if args.figures:
        _plots().latency_table(list(iter_rows(table)), os.path.join(out, "latency_table.png"))
    return 0


def cmd_bitline(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    params = cfg.circuit()
    t_pre = args.t_pre
    if t_pre is None:
        t_pre = apply_guardband(derive_min_latencies(params, args.vdd)).t_ras
    traj = simulate_bitline(params, args.vdd, args.cell == 1, t_pre_issue=t_pre, dt=args.dt)
    traj.to_csv(os.path.join(out, "bitline.csv"))
    _write_json(os.path.join(out, "bitline_markers.json"),
                {"vdd": args.vdd, "cell": args.cell, "t_pre_issue": t_pre,
                 "markers": traj.markers})
    if args.figures:
        _plots().bitline(traj, os.path.join(out, "bitline.png"))
    return 0


def cmd_simulate(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    table = cfg.latency_table()
    traces = _traces(args, cfg, seed)
    policy = args.policy or cfg.policy
    target = cfg.target_loss if args.target_loss is None else args.target_loss
    op = lookup(table, args.voltage) if args.voltage is not None else None
    ipc_alone = None if args.no_alone else _alone_ipc(cfg, traces, table, args.max_cycles)
    stats, energy = run_simulation(
        replace(cfg.system, cores=max(1, len(traces))), traces, policy, op, table, target,
        cfg.power, ipc_alone, keep_log=args.command_log, audit=True,
        max_cycles=args.max_cycles)
    result = stats.as_dict()
    result.update(policy=policy, target_loss=target, seed=seed,
                  ipc_alone=ipc_alone, version=__version__)
    _write_json(os.path.join(out, "stats.json"), result)
    with open(os.path.join(out, "energy.json"), "w") as fh:
        energy.to_json(fh)
    with open(os.path.join(out, "energy.csv"), "w", newline="") as fh:
        energy.to_csv(fh)
    with open(os.path.join(out, "decisions.csv"), "w", newline="") as fh:
        write_decision_log(stats.decisions, fh)
    if args.command_log:
        _write_command_log(stats.command_log, os.path.join(out, "commands.csv"))
    if args.figures:
        _plots().decisions(stats.decisions, os.path.join(out, "decisions.png"))
    if stats.violations:
        print(f"error: {len(stats.violations)} timing violations, first: "
              f"{stats.violations[0]}", file=sys.stderr)
        return 1
    return 0


def _sweep_member(job):
    """Run one sweep point; module level so worker processes can pickle it."""
    system, traces, table, power, policy, v, target, ipc_alone, max_cycles = job
    op = lookup(table, v) if v is not None else None
    stats, energy = run_simulation(system, traces, policy, op, table, target, power,
                                   ipc_alone, keep_log=False, audit=False,
                                   max_cycles=max_cycles)
    return {"ws": stats.weighted_speedup, "dram_power": energy.dram_power,
            "energy": energy.total, "cycles": stats.cycles}


def _relative(res, base):
    return (100.0 * (1.0 - res["ws"] / base["ws"]),
            100.0 * (1.0 - res["dram_power"] / base["dram_power"]),
            100.0 * (1.0 - res["energy"] / base["energy"]))


def cmd_sweep(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    table = cfg.latency_table()
    traces = _traces(args, cfg, seed)
    system = replace(cfg.system, cores=max(1, len(traces)))
    target = cfg.target_loss if args.target_loss is None else args.target_loss
    ipc_alone = _alone_ipc(cfg, traces, table, args.max_cycles)
    by_policy = args.policies is not None
    if by_policy:
        keys = list(args.policies)
        jobs = [(system, traces, table, cfg.power, p, None, target, ipc_alone, args.max_cycles)
                for p in keys]
    else:
        keys = list(args.voltages or DEFAULT_VOLTAGES)
        for v in keys:
            lookup(table, v)
        jobs = [(system, traces, table, cfg.power, "fixed", v, target, ipc_alone,
                 args.max_cycles) for v in keys]
    # the nominal baseline is always run explicitly, never reused
    base_job = (system, traces, table, cfg.power, "fixed", V_NOMINAL, target, ipc_alone,
                args.max_cycles)
    results = [None] * len(jobs)
    failure = None
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                base_f = pool.submit(_sweep_member, base_job)
                futs = [pool.submit(_sweep_member, j) for j in jobs]
                base = base_f.result()
                for i, f in enumerate(futs):
                    try:
                        results[i] = f.result()
                    except Exception as exc:  # noqa: BLE001 - reported below
                        failure = failure or exc
        else:
            base = _sweep_member(base_job)
            for i, j in enumerate(jobs):
                try:
                    results[i] = _sweep_member(j)
                except VoltsimError as exc:
                    failure = exc
                    break
    except VoltsimError as exc:
        base, failure = None, exc

    first = "policy" if by_policy else "v_array"
    header = [first] + SWEEP_HEADER[1:]
    rows = []
    for key, res in zip(keys, results):
        if res is None or base is None:
            rows.append(None)
            continue
        loss, dram, sysen = _relative(res, base)
        rows.append({first: key, "ws_loss_pct": loss, "dram_power_savings_pct": dram,
                     "system_energy_savings_pct": sysen})
    name = "sweep.partial.csv" if failure else "sweep.csv"
    with open(os.path.join(out, name), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + (["status"] if failure else []))
        for key, row in zip(keys, rows):
            label = key if by_policy else f"{key:.2f}"
            if row is None:
                if failure:
                    w.writerow([label, "", "", "", "failed"])
                continue
            vals = [label] + [_fmt(row[h]) for h in header[1:]]
            w.writerow(vals + (["ok"] if failure else []))
    if failure:
        print(f"error: sweep member failed: {failure}", file=sys.stderr)
        return 1
    if args.figures:
        plots = _plots()
        if by_policy:
            plots.policy_bars(rows, os.path.join(out, "sweep.png"))
        else:
            plots.sweep(rows, os.path.join(out, "sweep.png"))
    return 0


def _profile(name: str) -> em.DimmProfile:
    if os.path.isfile(name):
        return em.load_profile(name)
    return em.bundled_profile(name)


def _char_voltages(args):
    if args.voltages:
        return sorted(set(args.voltages), reverse=True)
    n = int(round((V_NOMINAL - args.v_low) / em.STEP))
    return [round(V_NOMINAL - em.STEP * i, 6) for i in range(n + 1)]


def _pattern_anova(reports_by_v):
    """Per-voltage ANOVA of round BER across the three pattern pairs."""
    rows = []
    for v, reps in reports_by_v:
        groups = [r.round_ber() for r in reps]
        if len(groups[0]) < 2 or not any(any(g) for g in groups):
            continue
        try:
            f, p = em.anova_oneway(groups)
        except UndefinedStatisticError:
            continue
        n = sum(len(g) for g in groups)
        rows.append((v, f, p, len(groups) - 1, n - len(groups)))
    return rows


def _write_anova(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voltage", "f", "p", "df_between", "df_within"])
        for v, f, p, d1, d2 in rows:
            w.writerow([f"{v:.3f}", _fmt(f), _fmt(p), d1, d2])


def _campaign(profile, volts, rounds, seed):
    out = []
    for v in volts:
        out.append((v, [em.voltage_test(profile, v, pattern=pat, rounds=rounds, seed=seed)
                        for pat in em.ALL_PATTERNS]))
    return out


def cmd_characterize(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    profile = _profile(args.profile)
    volts = _char_voltages(args)
    vmin = em.find_vmin(profile, seed=seed)
    lat = {}
    for v in volts:
        if v < vmin - 1e-9 and v >= profile.channel_floor - 1e-9:
            found = em.find_min_latencies_experimental(profile, v, seed=seed)
            lat[f"{v:.3f}"] = None if found is None else list(found)
    _write_json(os.path.join(out, "vmin.json"), {
        "profile": profile.name, "vendor": profile.vendor,
        "v_min_configured": profile.v_min, "v_min_found": vmin,
        "min_latencies_ns": lat, "seed": seed, "rounds": args.rounds})

    campaign = _campaign(profile, volts, args.rounds, seed)
    with open(os.path.join(out, "ber.csv"), "w", newline="") as fh:
        em.write_ber_csv([r for _, reps in campaign for r in reps], fh)
    fracs = []
    with open(os.path.join(out, "beats.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voltage", "beats_0", "beats_1", "beats_2", "beats_gt2"])
        for v, reps in campaign:
            hist = sum(r.beat_histogram for r in reps)
            fr = hist / sum(r.beats_tested for r in reps)
            fracs.append(fr)
            w.writerow([f"{v:.3f}"] + [_fmt(x) for x in fr])
    _write_anova(_pattern_anova(campaign), os.path.join(out, "anova.csv"))

    failing = [(v, reps) for v, reps in campaign if any(r.erroneous_lines for r in reps)]
    heat_v = args.heatmap_voltage
    if heat_v is None and failing:
        heat_v = failing[0][0]
    grid = None
    if heat_v is not None:
        reps = dict(campaign).get(heat_v)
        if reps is None:
            reps = [em.voltage_test(profile, heat_v, rounds=args.rounds, seed=seed)]
        grid = np.mean([em.spatial_heatmap(r) for r in reps], axis=0)
        with open(os.path.join(out, "heatmap.csv"), "w", newline="") as fh:
            em.write_heatmap_csv(grid, fh, nonzero_only=True)
    if args.figures:
        plots = _plots()
        plots.beat_histogram(volts, fracs, os.path.join(out, "beats.png"))
        if grid is not None:
            plots.heatmap(grid, os.path.join(out, "heatmap.png"),
                          f"{profile.name} at {heat_v:.3f} V")
    return 0


def _read_groups(path):
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"group", "value"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: need 'group' and 'value' columns")
        for i, rec in enumerate(reader, start=2):
            try:
                groups.setdefault(rec["group"], []).append(float(rec["value"]))
            except ValueError:
                raise ConfigError(f"{path}:{i}: bad value {rec['value']!r}")
    return [groups[k] for k in sorted(groups)], sorted(groups)


def cmd_anova(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    if args.input is not None:
        if not os.path.isfile(args.input):
            raise ConfigError(f"input not found: {args.input}")
        groups, names = _read_groups(args.input)
        f, p = em.anova_oneway(groups)
        n = sum(len(g) for g in groups)
        _write_json(os.path.join(out, "anova.json"), {
            "groups": names, "f": f, "p": p, "df_between": len(groups) - 1,
            "df_within": n - len(groups)})
        return 0
    profile = _profile(args.profile)
    campaign = _campaign(profile, _char_voltages(args), args.rounds, seed)
    _write_anova(_pattern_anova(campaign), os.path.join(out, "anova.csv"))
    return 0


def _read_samples(path):
    cols = ("latency_ns", "mpki", "stall_fraction", "loss_pct")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(cols) <= set(reader.fieldnames):
            raise ConfigError(f"{path}: need columns {','.join(cols)}")
        for i, rec in enumerate(reader, start=2):
            try:
                rows.append([float(rec[c]) for c in cols])
            except ValueError:
                raise ConfigError(f"{path}:{i}: non-numeric sample")
    return rows


def cmd_fit_predictor(args, cfg: RunConfig, seed: int) -> int:
    out = _out_dir(args, cfg)
    if args.samples is not None:
        if not os.path.isfile(args.samples):
            raise ConfigError(f"samples not found: {args.samples}")
        samples = _read_samples(args.samples)
    else:
        samples = synthetic_samples(DEFAULT_COEFFS, args.synthetic, args.noise, seed)
        with open(os.path.join(out, "samples.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["latency_ns", "mpki", "stall_fraction", "loss_pct"])
            for row in samples:
                w.writerow([_fmt(x) for x in row])
    report = fit_predictor(samples, split_seed=seed)
    data = report.as_dict()
    data["seed"] = seed
    _write_json(os.path.join(out, "fit.json"), data)
    return 0


# --- argument parsing -------------------------------------------------------------------

def _voltage_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad voltage list {text!r}")


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="RNG seed (falls back to $VOLTSIM_SEED)")
    common.add_argument("--out-dir", help="directory for reports (default: config or .)")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--trace", action="append", help="trace file, one per core (repeatable)")
    run.add_argument("--workload", choices=sorted(WORKLOADS), default="memory",
                     help="synthetic workload when no traces are given")
    run.add_argument("--requests", type=_positive_int, default=10000,
                     help="misses per core for synthetic workloads")
    run.add_argument("--target-loss", type=float, help="Voltron performance-loss target (%%)")
    run.add_argument("--max-cycles", type=_positive_int, help="stop after this many CPU cycles")

    chars = argparse.ArgumentParser(add_help=False)
    chars.add_argument("--profile", default="vendor_c",
                       help="bundled profile, DIMM name (e.g. B4) or JSON path")
    chars.add_argument("--rounds", type=_positive_int, default=30)
    chars.add_argument("--voltages", type=_voltage_list, help="comma-separated test voltages")
    chars.add_argument("--v-low", type=float, default=1.0,
                       help="lowest voltage of the default 25 mV grid")

    p = argparse.ArgumentParser(prog="voltsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"voltsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("latency-table", parents=[common], help="emit the voltage/latency table")
    s.add_argument("--source", choices=("table", "model"))
    s.add_argument("--calibrate", action="store_true",
                   help="re-fit the circuit model to the published table first")
    s.set_defaults(func=cmd_latency_table)

    s = sub.add_parser("bitline", parents=[common], help="bitline waveform for one access")
    s.add_argument("--vdd", type=float, default=V_NOMINAL)
    s.add_argument("--cell", type=int, choices=(0, 1), default=1)
    s.add_argument("--t-pre", type=float, help="PRE issue time in ns (default: guardbanded tRAS)")
    s.add_argument("--dt", type=float, default=0.01)
    s.set_defaults(func=cmd_bitline)

    s = sub.add_parser("simulate", parents=[common, run], help="run one simulation")
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--voltage", type=float, help="array voltage for the fixed policy")
    s.add_argument("--command-log", action="store_true", help="write commands.csv")
    s.add_argument("--no-alone", action="store_true",
                   help="skip the alone runs (no weighted speedup)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common, run], help="voltage or policy sweep")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--voltages", type=_voltage_list, help="comma-separated array voltages")
    g.add_argument("--policies", type=lambda t: t.split(","),
                   help=f"comma-separated policies from {','.join(POLICIES)}")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("characterize", parents=[common, chars],
                       help="error characterization of a DIMM profile")
    s.add_argument("--heatmap-voltage", type=float)
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("anova", parents=[common, chars],
                       help="one-way ANOVA of a group,value CSV or of pattern BERs")
    s.add_argument("--input", help="CSV with group,value columns")
    s.set_defaults(func=cmd_anova)

    s = sub.add_parser("fit-predictor", parents=[common], help="fit the loss predictor")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--samples", help="CSV of latency_ns,mpki,stall_fraction,loss_pct")
    g.add_argument("--synthetic", type=_positive_int, default=500,
                   help="number of synthetic samples when no CSV is given")
    s.add_argument("--noise", type=float, default=0.0, help="std of synthetic noise")
    s.set_defaults(func=cmd_fit_predictor)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "policies", None):
            bad = [x for x in args.policies if x not in POLICIES]
            if bad:
                parser.error(f"unknown policies: {','.join(bad)}")
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return exc.code
    try:
        cfg = _config(args)
        seed = _seed(args, cfg)
        return args.func(args, cfg, seed)
    except NoSuchOperatingPointError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except (ConfigError, UsageError, ProfileInvalidError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TraceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (VoltsimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
