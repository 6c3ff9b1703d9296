"""Array-voltage control: loss predictor, its OLS fit, and the runtime policies.

The predictor is a two-branch linear model of performance loss (%) in the
memory latency ``L = tRAS + tRP``, the interval MPKI and the fraction of
time the cores stall on memory. Voltage selection picks the lowest array
voltage whose predicted loss stays within a target.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError, SingularFitError
from .timing import (
    CLOCK_PERIODS,
    LatencyTable,
    TimingParams,
    V_NOMINAL,
    VoltageOperatingPoint,
    lookup,
    memdvfs_point,
    published_table,
)

_V_TOL = 1e-9


@dataclass(frozen=True)
class PredictorCoefficients:
    """``low`` applies when MPKI is below ``mpki_threshold``, ``high`` otherwise.

    Each branch is ``(intercept, latency, mpki, stall)``.
    """

    low: Tuple[float, float, float, float] = (-30.09, 0.59, 0.01, 19.24)
    high: Tuple[float, float, float, float] = (-50.04, 1.05, -0.01, 15.27)
    mpki_threshold: float = 15.0

    def __post_init__(self):
        if not self.mpki_threshold > 0:
            raise InvalidParameterError("mpki_threshold must be positive")
        if len(self.low) != 4 or len(self.high) != 4:
            raise InvalidParameterError("each branch needs four coefficients")
        if not all(math.isfinite(c) for c in self.low + self.high):
            raise InvalidParameterError("coefficients must be finite")


DEFAULT_COEFFS = PredictorCoefficients()


@dataclass(frozen=True)
class WorkloadProfile:
    mpki: float
    stall_fraction: float

    def __post_init__(self):
        if not self.mpki >= 0:
            raise InvalidParameterError("mpki must be non-negative")
        if not 0.0 <= self.stall_fraction <= 1.0:
            raise InvalidParameterError("stall fraction must lie in [0, 1]")


def predict_loss(coeffs: PredictorCoefficients, latency_ns: float, mpki: float,
                 stall_fraction: float) -> float:
    """Predicted performance loss in percent, clamped to [0, 100].

    Parameters
    ----------
    coeffs : PredictorCoefficients
    latency_ns : float
        tRAS + tRP of the candidate operating point.
    mpki : float
        Misses per kilo-instruction; selects the branch.
    stall_fraction : float
        Fraction of time stalled on memory, in [0, 1].
    """
    if not latency_ns > 0:
        raise InvalidParameterError("latency must be positive")
    if not mpki >= 0:
        raise InvalidParameterError("mpki must be non-negative")
    if not 0.0 <= stall_fraction <= 1.0:
        raise InvalidParameterError("stall fraction must lie in [0, 1]")
    a, b_lat, b_mpki, b_stall = coeffs.low if mpki < coeffs.mpki_threshold else coeffs.high
    raw = a + b_lat * latency_ns + b_mpki * mpki + b_stall * stall_fraction
    return min(100.0, max(0.0, raw))


# --- fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class BranchFit:
    coefficients: Tuple[float, float, float, float]
    rmse: float
    r2: float
    n_train: int
    n_test: int


@dataclass(frozen=True)
class FitReport:
    coefficients: PredictorCoefficients
    low: BranchFit
    high: BranchFit

    @property
    def n_train(self) -> int:
        return self.low.n_train + self.high.n_train

    @property
    def n_test(self) -> int:
        return self.low.n_test + self.high.n_test

    @property
    def rmse(self) -> float:
        """Test-set RMSE pooled over both branches."""
        sq = self.low.n_test * self.low.rmse ** 2 + self.high.n_test * self.high.rmse ** 2
        return math.sqrt(sq / self.n_test)

    def as_dict(self) -> dict:
        out = {"mpki_threshold": self.coefficients.mpki_threshold, "rmse": self.rmse}
        for name, br in (("low", self.low), ("high", self.high)):
            out[name] = {"coefficients": list(br.coefficients), "rmse": br.rmse,
                         "r2": br.r2, "n_train": br.n_train, "n_test": br.n_test}
        return out


def _ols(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve the normal equations through a Cholesky factorisation."""
    xtx = x.T @ x
    xty = x.T @ y
    scale = np.sqrt(np.diag(xtx))
    if np.any(scale == 0):
        raise SingularFitError("design matrix has an all-zero column")
    # equilibrate so the rank test does not depend on column units
    a = xtx / np.outer(scale, scale)
    if np.linalg.cond(a) > 1e12:
        raise SingularFitError("design matrix is rank deficient")
    n = a.shape[0]
    low = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j] - low[i, :j] @ low[j, :j]
            if i == j:
                if s <= 0:
                    raise SingularFitError("normal matrix is not positive definite")
                low[i, i] = math.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    z = np.zeros(n)
    rhs = xty / scale
    for i in range(n):
        z[i] = (rhs[i] - low[i, :i] @ z[:i]) / low[i, i]
    w = np.zeros(n)
    for i in reversed(range(n)):
        w[i] = (z[i] - low[i + 1:, i] @ w[i + 1:]) / low[i, i]
    return w / scale


def split_sizes(n: int) -> Tuple[int, int]:
    """70/30 train/test split; the test share is rounded up."""
    n_test = -(-3 * n // 10)
    return n - n_test, n_test


def _fit_branch(rows: np.ndarray, rng: np.random.Generator) -> BranchFit:
    n = len(rows)
    if n < 8:
        raise InvalidParameterError(f"need at least 8 samples per branch, got {n}")
    order = rng.permutation(n)
    n_train, n_test = split_sizes(n)
    train, test = rows[order[:n_train]], rows[order[n_train:]]

    def design(r):
        return np.column_stack([np.ones(len(r)), r[:, 0], r[:, 1], r[:, 2]])

    w = _ols(design(train), train[:, 3])
    pred = design(test) @ w
    resid = test[:, 3] - pred
    rmse = float(math.sqrt(np.mean(resid ** 2)))
    ss_tot = float(np.sum((test[:, 3] - test[:, 3].mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else -math.inf
    return BranchFit(tuple(float(c) for c in w), rmse, r2, n_train, n_test)


def fit_predictor(samples: Sequence[Sequence[float]], split_seed: int = 0,
                  mpki_threshold: float = 15.0) -> FitReport:
    """Fit both predictor branches by ordinary least squares.

    Parameters
    ----------
    samples : sequence of (latency_ns, mpki, stall_fraction, observed_loss)
    split_seed : int
        Seeds the shuffle behind each branch's 70/30 train/test split.
    mpki_threshold : float
        Branch boundary; samples with MPKI below it go to the low branch.

    Returns
    -------
    FitReport
        Coefficients plus test-set RMSE and R^2 for each branch.

    Raises
    ------
    SingularFitError
        If a branch's design matrix is rank deficient.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 4:
        raise InvalidParameterError("samples must be (latency, mpki, stall, loss) rows")
    rng = np.random.default_rng(split_seed)
    mask = data[:, 1] < mpki_threshold
    low = _fit_branch(data[mask], rng)
    high = _fit_branch(data[~mask], rng)
    coeffs = PredictorCoefficients(low.coefficients, high.coefficients, mpki_threshold)
    return FitReport(coeffs, low, high)


def synthetic_samples(coeffs: PredictorCoefficients, n: int, noise: float = 0.0,
                      seed: int = 0, latency_range=(50.0, 80.0), mpki_max: float = 40.0):
    """Draw ``n`` rows of (latency, mpki, stall, loss) from the linear model.

    Loss is the unclamped branch value plus Gaussian noise of std ``noise``,
    so an exact fit is possible when ``noise`` is zero.
    """
    if n < 1 or noise < 0:
        raise InvalidParameterError("need n >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    lat = rng.uniform(*latency_range, n)
    mpki = rng.uniform(0.0, mpki_max, n)
    stall = rng.uniform(0.0, 1.0, n)
    low = np.asarray(coeffs.low)
    high = np.asarray(coeffs.high)
    x = np.column_stack([np.ones(n), lat, mpki, stall])
    w = np.where((mpki < coeffs.mpki_threshold)[:, None], low, high)
    y = np.sum(x * w, axis=1)
    if noise > 0:
        y = y + rng.normal(0.0, noise, n)
    return np.column_stack([lat, mpki, stall, y])


# --- decisions ----------------------------------------------------------------

@dataclass(frozen=True)
class PolicyDecision:
    """Outcome of one control step.

    ``bank_timings`` lists per-bank timing sets when they differ across
    banks; otherwise every bank uses ``op_point.timings``.
    """

    op_point: VoltageOperatingPoint
    predicted_loss: float = 0.0
    slow_banks: int = 0
    cycle: int = 0
    policy: str = "fixed"
    fast_timings: Optional[TimingParams] = None

    def __post_init__(self):
        if not 0 <= self.slow_banks <= 8:
            raise InvalidParameterError("slow bank count must lie in [0, 8]")

    def bank_timings(self, n_banks: int) -> List[TimingParams]:
        if self.fast_timings is None:
            return [self.op_point.timings] * n_banks
        return [self.op_point.timings if b < self.slow_banks else self.fast_timings
                for b in range(n_banks)]

    @property
    def v_array(self) -> float:
        return self.op_point.v_array


def _candidates(table: LatencyTable):
    rows = sorted(table.rows, key=lambda r: r.v_array)
    return [r for r in rows if r.v_array < V_NOMINAL - _V_TOL]


def select_array_voltage(target_loss: float, profile: WorkloadProfile,
                         table: LatencyTable, coeffs: PredictorCoefficients = DEFAULT_COEFFS,
                         cycle: int = 0) -> PolicyDecision:
    """Lowest candidate array voltage whose predicted loss meets the target.

    Candidates are scanned upward from the lowest voltage below nominal;
    the first one that satisfies ``target_loss`` is returned. If none
    does, the nominal 1.35 V row is returned.
    """
    if not target_loss >= 0:
        raise InvalidParameterError("target loss must be non-negative")
    if not len(table):
        raise InvalidParameterError("empty latency table")
    chosen = lookup(table, V_NOMINAL)
    loss = predict_loss(coeffs, chosen.timings.latency, profile.mpki, profile.stall_fraction)
    for row in _candidates(table):
        p = predict_loss(coeffs, row.timings.latency, profile.mpki, profile.stall_fraction)
        if p <= target_loss:
            chosen, loss = row, p
            break
    return PolicyDecision(chosen, loss, 0, cycle, "voltron")


MEMDVFS_STEPS = ((1600, 1.35), (1333, 1.30), (1066, 1.25))


def memdvfs_select(bandwidth_util: float, thresholds=(0.40, 0.15),
                   table: LatencyTable = None) -> VoltageOperatingPoint:
    """Frequency/voltage step for a measured channel utilisation.

    Above ``hi`` the channel stays at 1600 MT/s and 1.35 V; above ``lo``
    (up to and including ``hi``) it runs at 1333 MT/s and 1.30 V; otherwise
    at 1066 MT/s and 1.25 V.
    """
    hi, lo = thresholds
    if not 0 <= lo <= hi <= 1:
        raise InvalidParameterError("need 0 <= lo <= hi <= 1")
    table = table or published_table()
    if bandwidth_util > hi:
        rate, v = MEMDVFS_STEPS[0]
    elif bandwidth_util > lo:
        rate, v = MEMDVFS_STEPS[1]
    else:
        rate, v = MEMDVFS_STEPS[2]
    return memdvfs_point(table, rate, v)


def slow_bank_count(v_array: float, banks: int = 8) -> int:
    """Banks that need the reduced-voltage timings: one more per 50 mV drop."""
    if not 0.90 - _V_TOL <= v_array <= V_NOMINAL + _V_TOL:
        raise InvalidParameterError("v_array must lie in [0.90, 1.35]")
    return min(banks, int(round((V_NOMINAL - v_array) / 0.05)))


# --- runtime policies ------------------------------------------------------------

POLICIES = ("fixed", "voltron", "voltron_bl", "memdvfs")


class Policy:
    name = "fixed"

    def __init__(self, table: LatencyTable, op_point: VoltageOperatingPoint = None):
        self.table = table
        self.op_point = op_point or lookup(table, V_NOMINAL)

    def initial(self) -> PolicyDecision:
        return PolicyDecision(self.op_point, 0.0, 0, 0, self.name)

    def decide(self, cycle: int, profile: WorkloadProfile, bandwidth_util: float) -> PolicyDecision:
        return PolicyDecision(self.op_point, 0.0, 0, cycle, self.name)


class VoltronPolicy(Policy):
    name = "voltron"

    def __init__(self, table, target_loss: float = 5.0, coeffs=DEFAULT_COEFFS, op_point=None):
        super().__init__(table, op_point)
        if not target_loss >= 0:
            raise InvalidParameterError("target loss must be non-negative")
        self.target = target_loss
        self.coeffs = coeffs

    def decide(self, cycle, profile, bandwidth_util):
        d = select_array_voltage(self.target, profile, self.table, self.coeffs, cycle)
        return PolicyDecision(d.op_point, d.predicted_loss, 0, cycle, self.name)


class VoltronBLPolicy(VoltronPolicy):
    """Voltron with reduced-voltage timings only on the first N banks."""

    name = "voltron_bl"

    def _split(self, op, loss, cycle):
        nominal = lookup(self.table, V_NOMINAL).timings
        return PolicyDecision(op, loss, slow_bank_count(op.v_array), cycle, self.name, nominal)

    def initial(self):
        return self._split(self.op_point, 0.0, 0)

    def decide(self, cycle, profile, bandwidth_util):
        d = select_array_voltage(self.target, profile, self.table, self.coeffs, cycle)
        return self._split(d.op_point, d.predicted_loss, cycle)


class MemDVFSPolicy(Policy):
    name = "memdvfs"

    def __init__(self, table, thresholds=(0.40, 0.15), op_point=None):
        super().__init__(table, op_point)
        hi, lo = thresholds
        if not 0 <= lo <= hi <= 1:
            raise InvalidParameterError("need 0 <= lo <= hi <= 1")
        self.thresholds = thresholds

    def decide(self, cycle, profile, bandwidth_util):
        op = memdvfs_select(bandwidth_util, self.thresholds, self.table)
        return PolicyDecision(op, 0.0, 0, cycle, self.name)


def make_policy(name: str, table: LatencyTable = None, target_loss: float = 5.0,
                op_point: VoltageOperatingPoint = None, coeffs=DEFAULT_COEFFS,
                thresholds=(0.40, 0.15)) -> Policy:
    table = table or published_table()
    if name == "fixed":
        return Policy(table, op_point)
    if name == "voltron":
        return VoltronPolicy(table, target_loss, coeffs)
    if name == "voltron_bl":
        return VoltronBLPolicy(table, target_loss, coeffs)
    if name == "memdvfs":
        return MemDVFSPolicy(table, thresholds)
    raise InvalidParameterError(f"unknown policy {name!r}; choose from {POLICIES}")


DECISION_HEADER = ["cycle", "policy", "v_array", "freq", "predicted_loss", "slow_banks"]


def write_decision_log(decisions: Sequence[PolicyDecision], fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DECISION_HEADER)
    for d in decisions:
        w.writerow([d.cycle, d.policy, f"{d.v_array:.2f}", d.op_point.channel_rate,
                    f"{d.predicted_loss:.6f}", d.slow_banks])
