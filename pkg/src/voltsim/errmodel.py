"""Synthetic DIMM error injection and the characterization harness.

A DIMM profile gives, for every (bank, row), the probability that a cache
line read back with the wrong data at a given voltage and latency pair.
Below Vmin the rate grows by a factor ``exp(k)`` for every 25 mV of
undervolt unless the activation and precharge latencies are raised to the
profile's required values. Below the channel-failure floor no latency
helps and errors appear everywhere.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    InvalidParameterError,
    ProfileInvalidError,
    UndefinedStatisticError,
)

PATTERNS = ((0x00, 0xFF), (0xAA, 0x33), (0xCC, 0x55))
VMIN_VALUES = (1.100, 1.125, 1.150, 1.250, 1.300)
STEP = 0.025
LATENCY_GRID = (10.0, 12.5, 15.0, 17.5, 20.0)
SCAN_FLOOR = 0.90
NOMINAL_V = 1.35
# reliable latencies measured at nominal voltage; the characterization baseline
NOMINAL_TRCD = 10.0
NOMINAL_TRP = 10.0
BEAT_BITS = 64
BEATS_PER_LINE = 8
_TOL = 1e-9


@dataclass(frozen=True)
class DataPatternPair:
    pattern: int
    companion: int

    def __post_init__(self):
        if (self.pattern, self.companion) not in PATTERNS:
            raise InvalidParameterError(
                f"pattern pair (0x{self.pattern:02x}, 0x{self.companion:02x}) is not tested")

    @property
    def index(self) -> int:
        return PATTERNS.index((self.pattern, self.companion))

    @property
    def label(self) -> str:
        return f"0x{self.pattern:02x}/0x{self.companion:02x}"


ALL_PATTERNS = tuple(DataPatternPair(p, c) for p, c in PATTERNS)


@dataclass(frozen=True)
class RowCluster:
    center: int
    width: int
    weight: float


@dataclass(frozen=True)
class DimmProfile:
    """Error-injection parameters for one synthetic DIMM.

    ``required`` lists ``(v, trcd_ns, trp_ns)`` rows: the latencies that make
    reads error-free at that voltage. Lookups use the closest listed voltage
    at or below the query, so a gap in the list errs on the slow side.
    """

    name: str
    vendor: str
    v_min: float
    k: float = math.log(10.0)
    f0: float = 1e-6
    bank_weights: Tuple[float, ...] = (1.0,) * 8
    clusters: Tuple[RowCluster, ...] = ()
    row_floor: float = 1.0
    required: Tuple[Tuple[float, float, float], ...] = ()
    channel_floor: float = 1.05
    rows: int = 4096
    lines_per_row: int = 128
    bits_mean: float = 4.0
    pattern_multipliers: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    temperature_offset_ns: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.vendor not in ("A", "B", "C"):
            raise ProfileInvalidError(f"unknown vendor {self.vendor!r}")
        if not any(abs(self.v_min - v) < _TOL for v in VMIN_VALUES):
            raise ProfileInvalidError(f"v_min {self.v_min} is not a characterized value")
        if not 0.0 <= self.f0 <= 1.0:
            raise ProfileInvalidError("f0 must lie in [0, 1]")
        if self.k < 0:
            raise ProfileInvalidError("k must be non-negative")
        if len(self.bank_weights) != 8 or not all(0 <= w <= 1 for w in self.bank_weights):
            raise ProfileInvalidError("need eight bank weights in [0, 1]")
        if not 0 <= self.row_floor <= 1:
            raise ProfileInvalidError("row_floor must lie in [0, 1]")
        for c in self.clusters:
            if not 0 <= c.weight <= 1 or c.width < 0:
                raise ProfileInvalidError("cluster weight must lie in [0, 1]")
        if self.rows < 2 or self.rows % 2:
            raise ProfileInvalidError("rows must be an even number >= 2")
        if self.lines_per_row < 1:
            raise ProfileInvalidError("lines_per_row must be positive")
        if not 1.0 <= self.bits_mean <= BEAT_BITS:
            raise ProfileInvalidError("bits_mean must lie in [1, 64]")
        if len(self.pattern_multipliers) != 3 or min(self.pattern_multipliers) < 0:
            raise ProfileInvalidError("need three non-negative pattern multipliers")
        for v, trcd, trp in self.required:
            if v >= self.v_min - _TOL:
                raise ProfileInvalidError("required-latency rows must lie below v_min")
            if max(trcd, trp) <= NOMINAL_TRCD:
                raise ProfileInvalidError(
                    "below v_min at least one latency must exceed the nominal minimum")

    @property
    def banks(self) -> int:
        return len(self.bank_weights)

    def required_latency(self, v: float) -> Optional[Tuple[float, float]]:
        """(trcd, trp) that avoid errors at ``v``; ``None`` if nothing does."""
        if v >= self.v_min - _TOL:
            return (0.0, 0.0)
        if v < self.channel_floor - _TOL:
            return None
        below = [r for r in self.required if r[0] <= v + _TOL]
        if not below:
            return None
        _, trcd, trp = max(below, key=lambda r: r[0])
        off = self.temperature_offset_ns
        return (trcd + off, trp + off)

    def spatial_weights(self, v: float) -> np.ndarray:
        """(banks, rows) weight grid at voltage ``v``."""
        if v < self.channel_floor - _TOL:
            return np.ones((self.banks, self.rows))
        rows = np.arange(self.rows)
        row_w = np.full(self.rows, self.row_floor)
        for c in self.clusters:
            row_w = np.where(np.abs(rows - c.center) <= c.width,
                             np.maximum(row_w, c.weight), row_w)
        return np.outer(np.asarray(self.bank_weights, dtype=float), row_w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clusters"] = [asdict(c) for c in self.clusters]
        d["required"] = [list(r) for r in self.required]
        d["bank_weights"] = list(self.bank_weights)
        d["pattern_multipliers"] = list(self.pattern_multipliers)
        return d

    def to_json(self, fh):
        json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def profile_from_dict(d: dict) -> DimmProfile:
    try:
        d = dict(d)
        d["clusters"] = tuple(RowCluster(int(c["center"]), int(c["width"]), float(c["weight"]))
                              for c in d.get("clusters", ()))
        d["required"] = tuple(tuple(float(x) for x in r) for r in d.get("required", ()))
        d["bank_weights"] = tuple(float(w) for w in d.get("bank_weights", (1.0,) * 8))
        d["pattern_multipliers"] = tuple(float(m) for m in
                                         d.get("pattern_multipliers", (1.0, 1.0, 1.0)))
        return DimmProfile(**d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProfileInvalidError):
            raise
        raise ProfileInvalidError(f"malformed profile: {exc}") from exc


def load_profile(path) -> DimmProfile:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProfileInvalidError(f"{path}: {exc}") from exc
    return profile_from_dict(data)


BUNDLED = ("vendor_a", "vendor_b", "vendor_c")


def bundled_profile(name: str) -> DimmProfile:
    """One of the shipped vendor profiles, or a DIMM from the Vmin table (e.g. ``C3``)."""
    if name in BUNDLED:
        text = resources.files("voltsim.data").joinpath(f"{name}.json").read_text()
        return profile_from_dict(json.loads(text))
    for row in dimm_table():
        if row["name"] == name:
            return dimm_profile(row)
    raise ProfileInvalidError(f"no bundled profile named {name!r}")


def dimm_table() -> List[dict]:
    text = resources.files("voltsim.data").joinpath("dimm_vmin.json").read_text()
    return json.loads(text)["dimms"]


def dimm_profile(row: dict) -> DimmProfile:
    """Vendor template shifted so that its Vmin matches a listed DIMM."""
    base = bundled_profile("vendor_" + row["vendor"].lower())
    shift = row["v_min"] - base.v_min
    req = tuple((round(v + shift, 6), rcd, rp) for v, rcd, rp in base.required)
    return replace(base, name=row["name"], v_min=row["v_min"], required=req,
                   channel_floor=round(base.channel_floor + shift, 6))


# --- error probabilities -----------------------------------------------------------

def _rate(profile: DimmProfile, v: float) -> float:
    return min(1.0, profile.f0 * math.exp(profile.k * (profile.v_min - v) / STEP))


def line_error_probability(profile: DimmProfile, v: float, trcd: float, trp: float,
                           bank: int, row: int, pattern: int = 0) -> float:
    """Probability that one cache line at (bank, row) reads back wrong."""
    if not v > 0:
        raise InvalidParameterError("voltage must be positive")
    return float(probability_grid(profile, v, trcd, trp, pattern)[bank, row])


def probability_grid(profile: DimmProfile, v: float, trcd: float, trp: float,
                     pattern: int = 0) -> np.ndarray:
    """Per-line error probability for every (bank, row)."""
    if not v > 0:
        raise InvalidParameterError("voltage must be positive")
    req = profile.required_latency(v)
    if req is not None and trcd >= req[0] - _TOL and trp >= req[1] - _TOL:
        return np.zeros((profile.banks, profile.rows))
    p = _rate(profile, v) * profile.pattern_multipliers[pattern]
    return np.minimum(1.0, p * profile.spatial_weights(v))


# --- Test 1 ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Accumulated outcome of one voltage/latency/pattern test cell.

    ``errors`` sums erroneous lines per (bank, row) over all rounds;
    ``error_rounds`` counts the rounds in which each row saw any error.
    ``beat_histogram`` bins every tested beat by bit errors: 0, 1, 2, >2.
    """

    v: float
    trcd: float
    trp: float
    pattern: DataPatternPair
    rounds: int
    errors: np.ndarray
    error_rounds: np.ndarray
    lines_tested: int
    erroneous_lines: int
    beat_histogram: np.ndarray
    round_bit_errors: List[int] = field(default_factory=list)
    bits_per_round: int = 0

    @property
    def error_fraction(self) -> float:
        return self.erroneous_lines / self.lines_tested if self.lines_tested else 0.0

    @property
    def beats_tested(self) -> int:
        return self.lines_tested * BEATS_PER_LINE

    def round_ber(self) -> List[float]:
        return [b / self.bits_per_round for b in self.round_bit_errors]


def _bits_pmf(mean: float) -> np.ndarray:
    """P(bits = 1..64) for ``1 + Binomial(63, q)`` with the given mean."""
    n = BEAT_BITS - 1
    q = (mean - 1.0) / n
    pmf = np.array([math.comb(n, j) * q ** j * (1.0 - q) ** (n - j) for j in range(n + 1)])
    return pmf / pmf.sum()


def _cell_rng(seed: int, v: float, trcd: float, trp: float, pattern: int,
              round_idx: int) -> np.random.Generator:
    key = [int(seed), int(round(v * 10000)), int(round(trcd * 100)),
           int(round(trp * 100)), int(pattern), int(round_idx)]
    return np.random.default_rng(np.random.SeedSequence(key))


def voltage_test(profile: DimmProfile, v: float, trcd: float = NOMINAL_TRCD,
                 trp: float = NOMINAL_TRP, pattern: DataPatternPair = ALL_PATTERNS[0],
                 rounds: int = 30, seed: int = None) -> ErrorReport:
    """Run Test 1 at voltage ``v`` for ``rounds`` rounds.

    Every bank is walked in row pairs: the even row holds the pattern and
    the odd row its companion, then both are read back. Each line fails
    independently with its grid probability. A failing line puts all its
    flipped bits in a single beat, ``1 + Binomial(63, q)`` of them, with
    ``q`` set so the mean matches ``profile.bits_mean``; the per-round bit
    counts are drawn jointly as one multinomial over 1..64.

    Each round draws from its own stream keyed by (seed, v, trcd, trp,
    pattern, round), so results do not depend on execution order.
    """
    if rounds < 1:
        raise InvalidParameterError("rounds must be >= 1")
    seed = profile.seed if seed is None else seed
    grid = probability_grid(profile, v, trcd, trp, pattern.index)
    lines = profile.lines_per_row
    pmf = _bits_pmf(profile.bits_mean)
    values = np.arange(1, BEAT_BITS + 1)
    errors = np.zeros(grid.shape, dtype=np.int64)
    err_rounds = np.zeros(grid.shape, dtype=np.int64)
    hist = np.zeros(4, dtype=np.int64)
    bit_errors = []
    per_round_lines = grid.size * lines
    for r in range(rounds):
        if not grid.any():
            bit_errors.append(0)
            continue
        rng = _cell_rng(seed, v, trcd, trp, pattern.index, r)
        bad = rng.binomial(lines, grid)
        errors += bad
        err_rounds += bad > 0
        counts = rng.multinomial(int(bad.sum()), pmf)
        hist[1] += int(counts[0])
        hist[2] += int(counts[1])
        hist[3] += int(counts[2:].sum())
        bit_errors.append(int(counts @ values))
    total_lines = per_round_lines * rounds
    erroneous = int(errors.sum())
    hist[0] = total_lines * BEATS_PER_LINE - hist[1:].sum()
    return ErrorReport(v, trcd, trp, pattern, rounds, errors, err_rounds, total_lines,
                       erroneous, hist, bit_errors, per_round_lines * 8 * BEAT_BITS)


def expected_error_fraction(profile: DimmProfile, v: float, trcd: float = NOMINAL_TRCD,
                            trp: float = NOMINAL_TRP, pattern: int = 0) -> float:
    return float(probability_grid(profile, v, trcd, trp, pattern).mean())


def _has_errors(profile, v, trcd, trp, seed, rounds=1) -> bool:
    for pat in ALL_PATTERNS:
        if voltage_test(profile, v, trcd, trp, pat, rounds, seed).erroneous_lines:
            return True
    return False


def find_vmin(profile: DimmProfile, trcd: float = NOMINAL_TRCD, trp: float = NOMINAL_TRP,
              seed: int = None, floor: float = SCAN_FLOOR) -> float:
    """Lowest error-free voltage found by a coarse-then-fine scan.

    The scan walks down from 1.35 V in 50 mV steps until a step shows
    errors, then tries the 25 mV point above the failing step. If nothing
    fails down to ``floor`` the floor is returned.

    Raises
    ------
    ProfileInvalidError
        If the DIMM already fails at 1.35 V.
    """
    seed = profile.seed if seed is None else seed
    if _has_errors(profile, NOMINAL_V, trcd, trp, seed):
        raise ProfileInvalidError("errors at nominal voltage")
    n_coarse = int(round((NOMINAL_V - floor) / 0.05))
    last_ok = NOMINAL_V
    for i in range(1, n_coarse + 1):
        v = round(NOMINAL_V - 0.05 * i, 6)
        if _has_errors(profile, v, trcd, trp, seed):
            mid = round(v + STEP, 6)
            return last_ok if _has_errors(profile, mid, trcd, trp, seed) else mid
        last_ok = v
    return last_ok


def find_min_latencies_experimental(profile: DimmProfile, v: float, seed: int = None,
                                    grid: Sequence[float] = LATENCY_GRID):
    """Smallest (tRCD, tRP) on a 2.5 ns grid that reads back without errors.

    tRCD is searched with tRP held at the largest grid value, then tRP with
    the tRCD just found. Returns ``None`` if even the largest pair fails.
    """
    seed = profile.seed if seed is None else seed
    top = grid[-1]
    if _has_errors(profile, v, top, top, seed):
        return None
    trcd = next(t for t in grid if not _has_errors(profile, v, t, top, seed))
    trp = next(t for t in grid if not _has_errors(profile, v, trcd, t, seed))
    return (trcd, trp)


# --- ECC and statistics ---------------------------------------------------------------

def secded_classify(bit_errors_in_beat: int) -> str:
    """Outcome of SECDED ECC on one 64-bit beat."""
    if bit_errors_in_beat < 0 or bit_errors_in_beat > BEAT_BITS:
        raise InvalidParameterError("bit error count must lie in [0, 64]")
    if bit_errors_in_beat == 0:
        return "clean"
    if bit_errors_in_beat == 1:
        return "corrected"
    if bit_errors_in_beat == 2:
        return "detected"
    return "uncorrectable"


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise UndefinedStatisticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidParameterError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_survival(f: float, d1: float, d2: float) -> float:
    """P(F > f) for an F(d1, d2) variable."""
    if f <= 0:
        return 1.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def anova_oneway(groups: Sequence[Sequence[float]]) -> Tuple[float, float]:
    """One-way ANOVA across ``groups``.

    Returns
    -------
    (F, p) : tuple of float
        The F statistic and its survival probability under F(k-1, N-k).

    Raises
    ------
    UndefinedStatisticError
        If every group has zero internal variance.
    """
    gs = [np.asarray(g, dtype=float) for g in groups]
    if len(gs) < 2:
        raise InvalidParameterError("need at least two groups")
    if any(len(g) < 2 for g in gs):
        raise InvalidParameterError("each group needs at least two values")
    n = sum(len(g) for g in gs)
    k = len(gs)
    grand = sum(g.sum() for g in gs) / n
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in gs)
    scale = max(1.0, sum(float((g ** 2).sum()) for g in gs))
    if ss_within <= 1e-24 * scale:
        raise UndefinedStatisticError("zero variance within every group")
    df_b, df_w = k - 1, n - k
    f = (ss_between / df_b) / (ss_within / df_w)
    return float(f), float(f_survival(f, df_b, df_w))


def spatial_heatmap(report: ErrorReport) -> np.ndarray:
    """Fraction of rounds in which each (bank, row) produced an error."""
    if report.rounds < 1:
        raise InvalidParameterError("report has no rounds")
    return report.error_rounds / report.rounds


# --- CSV output ----------------------------------------------------------------------

def write_heatmap_csv(grid: np.ndarray, fh, nonzero_only: bool = False):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bank", "row", "prob"])
    for b in range(grid.shape[0]):
        for r in range(grid.shape[1]):
            p = grid[b, r]
            if nonzero_only and p == 0:
                continue
            w.writerow([b, r, repr(float(p))])


def write_ber_csv(reports: Sequence[ErrorReport], fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["voltage", "pattern", "round", "ber"])
    for rep in reports:
        for r, ber in enumerate(rep.round_ber()):
            w.writerow([f"{rep.v:.3f}", rep.pattern.label, r, repr(ber)])


def beat_fractions(report: ErrorReport) -> np.ndarray:
    """Histogram of beats by bit-error count, as fractions of beats tested."""
    return report.beat_histogram / report.beats_tested


def expected_beat_fractions(profile: DimmProfile, v: float, trcd: float = NOMINAL_TRCD,
                            trp: float = NOMINAL_TRP, pattern: int = 0) -> np.ndarray:
    """Expected share of beats with 0, 1, 2 and >2 bit errors at ``v``.

    This is the per-round mean of :func:`beat_fractions`, computed from the
    line error probabilities without sampling.
    """
    p_line = float(probability_grid(profile, v, trcd, trp, pattern).mean())
    pmf = _bits_pmf(profile.bits_mean)
    bad_beat = p_line / BEATS_PER_LINE
    out = np.array([0.0, pmf[0], pmf[1], pmf[2:].sum()]) * bad_beat
    out[0] = 1.0 - out[1:].sum()
    return out
