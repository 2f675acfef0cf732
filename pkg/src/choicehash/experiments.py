"""Seeded Monte Carlo harness for load thresholds and queue behavior.

Covers balanced-allocation max loads, success curves and bisection
threshold estimates for cuckoo placement / peeling / k-column linear
systems, the pending-key queue recurrence behind bounded linear probing,
an M/D/1 queue simulator, and the paired hashing-variant comparisons.

Trials are driven by per-trial seeds derived from one master seed, so
every report is reproducible bit for bit; aggregation only sums counts,
which keeps trials embarrassingly parallel.  Curve points serialize to
CSV with the fixed header
``experiment,structure,k,ell,mode,m,c,trials,successes,fraction,wilson_lo,wilson_hi,seed``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .hashcore import (
    ChoiceConfig,
    fingerprint_u64,
    kset_columns_batch,
    mix64,
    mix64_u64,
    mulhi64_u64,
    positions_for_batch,
    stream_hash_u64,
)

CSV_HEADER = "experiment,structure,k,ell,mode,m,c,trials,successes,fraction,wilson_lo,wilson_hi,seed"

# Reference load thresholds (asymptotic constants used as test targets).
C_K_STAR = {1: 0.0, 2: 0.5, 3: 0.91794, 4: 0.97677, 5: 0.99244, 6: 0.99738, 7: 0.99906}
C_2L_STAR = {1: 0.5, 2: 0.89701, 3: 0.95915, 4: 0.98037, 5: 0.98955, 6: 0.99407}
C_K_PEEL = {3: 0.81847, 4: 0.77228, 5: 0.70178, 6: 0.63708, 7: 0.58178}


@dataclass(frozen=True)
class TrialPlan:
    """Master seed plus trial count; trial i runs under mix64(seed ^ mix64(i))."""

    seed: int
    trials: int

    def trial_seed(self, i: int) -> int:
        return mix64(self.seed ^ mix64(i))

    def subplan(self, tag: int, trials: int | None = None) -> "TrialPlan":
        return TrialPlan(mix64(self.seed ^ mix64(0x5B5EED ^ tag)), trials or self.trials)


@dataclass(frozen=True)
class Cuckoo:
    """Feasibility = a collision-free placement exists (matching)."""

    k: int
    ell: int = 1
    mode: str = "independent"
    eps: float | None = None

    label = "cuckoo"


@dataclass(frozen=True)
class Peel:
    """Feasibility = greedy peeling places every key (empty core)."""

    k: int
    ell: int = 1
    mode: str = "independent"
    eps: float | None = None

    label = "peel"


@dataclass(frozen=True)
class KSetSystem:
    """Feasibility = the k-column linear system solves for a random rhs."""

    k: int

    label = "kset"


def _instance_arrays(structure, n: int, m: int, seed: int):
    cfg = ChoiceConfig(m, structure.k, structure.ell, structure.mode, structure.eps)
    fps = fingerprint_u64(np.arange(n, dtype=np.uint64), seed)
    cand = positions_for_batch(fps, cfg)
    width = cand.shape[1]
    indptr = np.arange(0, (n + 1) * width, width, dtype=np.int64)
    return indptr, cand.reshape(-1)


def structure_feasible(structure, n: int, m: int, seed: int) -> bool:
    """One feasibility trial of the given structure at n keys in m cells."""
    if isinstance(structure, Cuckoo):
        indptr, cells = _instance_arrays(structure, n, m, seed)
        feasible, _, _ = _kernels.match_kernel(indptr, cells, m)
        return bool(feasible)
    if isinstance(structure, Peel):
        indptr, cells = _instance_arrays(structure, n, m, seed)
        placed, _ = _kernels.peel_kernel(indptr, cells, m)
        return int(placed) == n
    if isinstance(structure, KSetSystem):
        fps = fingerprint_u64(np.arange(n, dtype=np.uint64), seed)
        cols = kset_columns_batch(fps, structure.k, m)
        rhs = (mix64_u64(fps ^ np.uint64(mix64(seed ^ 0xB175))) & np.uint64(1)).astype(np.int64)
        return _kset_system_solvable(cols, rhs, m)
    raise TypeError(f"unknown structure {structure!r}")


def _kset_system_solvable(cols: np.ndarray, rhs: np.ndarray, m: int) -> bool:
    rows = []
    for i in range(cols.shape[0]):
        mask = 0
        for c in cols[i]:
            mask |= 1 << int(c)
        rows.append((mask, int(rhs[i])))
    rows.sort(key=lambda mr: (mr[0] & -mr[0]).bit_length())
    pivot: dict[int, tuple[int, int]] = {}
    for mask, b in rows:
        while mask:
            j = (mask & -mask).bit_length() - 1
            if j not in pivot:
                pivot[j] = (mask, b)
                break
            pm, pb = pivot[j]
            mask ^= pm
            b ^= pb
        else:
            if b:
                return False
    return True


def wilson(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial fraction (well-behaved near 0/1)."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class CurvePoint:
    experiment: str
    structure: str
    k: int
    ell: int | str
    mode: str
    m: int
    c: float
    trials: int
    successes: int
    fraction: float
    wilson_lo: float
    wilson_hi: float
    seed: int
    elapsed: float = field(default=0.0, compare=False)

    def csv_row(self) -> str:
        return (f"{self.experiment},{self.structure},{self.k},{self.ell},{self.mode},"
                f"{self.m},{self.c:.10g},{self.trials},{self.successes},"
                f"{self.fraction:.6f},{self.wilson_lo:.6f},{self.wilson_hi:.6f},{self.seed}")


def points_to_csv(points) -> str:
    return "\n".join([CSV_HEADER] + [p.csv_row() for p in points]) + "\n"


def _structure_fields(structure) -> tuple[str, int, int | str, str]:
    if isinstance(structure, KSetSystem):
        return structure.label, structure.k, "-", "-"
    return structure.label, structure.k, structure.ell, structure.mode


def success_fraction(structure, m: int, c: float, plan: TrialPlan,
                     experiment: str = "curve", base: int = 0) -> CurvePoint:
    """Success fraction over plan.trials feasibility trials at n = floor(c*m)."""
    n = int(c * m)
    t0 = time.perf_counter()
    successes = sum(
        structure_feasible(structure, n, m, plan.trial_seed(base + t))
        for t in range(plan.trials))
    lo, hi = wilson(successes, plan.trials)
    label, k, ell, mode = _structure_fields(structure)
    return CurvePoint(experiment, label, k, ell, mode, m, c, plan.trials, successes,
                      successes / plan.trials, lo, hi, plan.seed,
                      elapsed=time.perf_counter() - t0)


def success_curve(structure, m: int, cs, plan: TrialPlan) -> list[CurvePoint]:
    """One point per load factor, each under its own block of trial seeds."""
    return [
        success_fraction(structure, m, c, plan, base=i * plan.trials)
        for i, c in enumerate(cs)
    ]


@dataclass
class ThresholdEstimate:
    estimate: float
    half_width: float
    lo: float
    hi: float
    level: float
    points: list
    elapsed: float = 0.0


def estimate_crossing(structure, m: int, plan: TrialPlan, level: float = 0.5,
                      lo: float = 0.01, hi: float = 0.999, iters: int = 12,
                      tol: float | None = None) -> ThresholdEstimate:
    """Bisect the load factor where the success fraction crosses `level`.

    Success is nonincreasing in c, so fraction >= level sends the
    bracket right.  Stops after `iters` halvings or when the bracket
    half-width reaches tol.
    """
    points = []
    t0 = time.perf_counter()
    for i in range(iters):
        if tol is not None and (hi - lo) / 2 <= tol:
            break
        mid = (lo + hi) / 2
        cp = success_fraction(structure, m, mid, plan, experiment="threshold",
                              base=i * plan.trials)
        points.append(cp)
        if cp.fraction >= level:
            lo = mid
        else:
            hi = mid
    return ThresholdEstimate((lo + hi) / 2, (hi - lo) / 2, lo, hi, level, points,
                             elapsed=time.perf_counter() - t0)


def estimate_threshold(structure, m: int, plan: TrialPlan, tol: float = 0.01,
                       **kwargs) -> ThresholdEstimate:
    """Bisection for the 50% success crossing (the empirical load threshold)."""
    return estimate_crossing(structure, m, plan, level=0.5, tol=tol, **kwargs)


# --- balanced allocation ----------------------------------------------------

@dataclass
class BallsReport:
    n: int
    m: int
    d: int
    max_loads: list
    seed: int

    @property
    def mean_max_load(self) -> float:
        return float(np.mean(self.max_loads))

    @property
    def worst_max_load(self) -> int:
        return int(np.max(self.max_loads))


def balls_bins_maxload(n: int, m: int, d: int, plan: TrialPlan) -> BallsReport:
    """Sequential d-choice balls-into-bins; balls go to the least-loaded
    sampled bin, ties to the lowest index."""
    if d < 1:
        raise ValueError("d must be >= 1")
    maxima = []
    for t in range(plan.trials):
        fps = fingerprint_u64(np.arange(n, dtype=np.uint64), plan.trial_seed(t))
        choices = np.empty((n, d), dtype=np.int64)
        for i in range(d):
            choices[:, i] = mulhi64_u64(stream_hash_u64(fps, i), m).astype(np.int64)
        maxima.append(int(_kernels.balls_maxload_kernel(choices, m)))
    return BallsReport(n, m, d, maxima, plan.seed)


# --- bounded linear probing & queues ----------------------------------------

def queue_trace(xs) -> np.ndarray:
    """q_i = max(0, q_{i-1} + x_i - 1) with q_0 = 0, evaluated exactly."""
    x = np.asarray(xs, dtype=np.int64)
    if x.size == 0:
        return np.zeros(0, dtype=np.int64)
    if x.min() < 0:
        raise ValueError("arrival counts must be nonnegative")
    drift = np.cumsum(x - 1)
    floor = np.minimum.accumulate(np.minimum(drift, 0))
    return drift - floor


@dataclass
class GreedyResult:
    success: bool
    cells: list | None = None
    witness: tuple[int, int] | None = None


def greedy_bounded_probe(starts, w: int, m: int) -> GreedyResult:
    """Leftmost placement of each key within w cells of its start.

    On failure returns a witness range [a, b] containing, fully, the
    blocks of at least (b - a + 2) keys, which proves infeasibility.
    """
    starts = list(starts)
    if any(starts[i] > starts[i + 1] for i in range(len(starts) - 1)):
        raise ValueError("starts must be sorted ascending")
    if starts and (starts[0] < 0 or max(starts) > m - w):
        raise ValueError("start out of range")
    occupant_start: dict[int, int] = {}
    cells = []
    for s in starts:
        placed_at = -1
        for j in range(s, s + w):
            if j not in occupant_start:
                placed_at = j
                break
        if placed_at >= 0:
            occupant_start[placed_at] = s
            cells.append(placed_at)
            continue
        b = s + w - 1
        a = s
        while True:
            ms = min(min(occupant_start[j] for j in range(a, b + 1)), s)
            if ms >= a:
                break
            a = ms
        return GreedyResult(False, witness=(a, b))
    return GreedyResult(True, cells=cells)


def witness_is_valid(starts, w: int, witness: tuple[int, int]) -> bool:
    """At least (b - a + 2) keys have their whole block inside [a, b]."""
    a, b = witness
    contained = sum(1 for s in starts if s >= a and s + w - 1 <= b)
    return contained >= (b - a + 1) + 1


# --- M/D/1 simulation --------------------------------------------------------

def poisson_counts(alpha: float, steps: int, seed: int) -> np.ndarray:
    """Poisson(alpha) samples by CDF inversion of a seeded uniform stream."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    pmf = []
    p = math.exp(-alpha)
    k = 0
    total = p
    while total < 1.0 - 1e-15 and k < 4096:
        pmf.append(p)
        k += 1
        p *= alpha / k
        total += p
    pmf.append(p)
    cdf = np.cumsum(np.array(pmf))
    base = np.uint64(mix64(seed ^ 0x4D443144))
    raw = mix64_u64(np.arange(1, steps + 1, dtype=np.uint64) ^ base)
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


@dataclass
class MD1Report:
    alpha: float
    steps: int
    burn_in: int
    mean_queue: float
    tail: np.ndarray  # tail[w] = Pr[q >= w]
    seed: int

    @property
    def pk_mean(self) -> float:
        """Pollaczek-Khinchine closed form alpha^2 / (2 (1 - alpha))."""
        return self.alpha * self.alpha / (2.0 * (1.0 - self.alpha))


def md1_simulate(alpha: float, steps: int, seed: int, burn_in: int | None = None) -> MD1Report:
    """Iterate the queue recurrence with Poisson(alpha) arrivals."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if burn_in is None:
        burn_in = min(steps // 10, 100_000)
    x = poisson_counts(alpha, steps, seed)
    q = queue_trace(x)[burn_in:]
    counts = np.bincount(q)
    tail = counts[::-1].cumsum()[::-1] / q.size
    return MD1Report(alpha, steps, burn_in, float(q.mean()), tail, seed)


def tail_log_linearity(report: MD1Report, w_lo: int = 5, w_hi: int = 25) -> tuple[float, float]:
    """(R^2, slope) of log Pr[q >= w] against w on [w_lo, w_hi]."""
    ws = np.arange(w_lo, min(w_hi, report.tail.size - 1) + 1)
    ys = np.log(report.tail[ws])
    slope, intercept = np.polyfit(ws, ys, 1)
    fitted = slope * ws + intercept
    ss_res = float(((ys - fitted) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot, float(slope)


# --- hashing-variant comparisons ---------------------------------------------

@dataclass
class VariantReport:
    independent: ThresholdEstimate
    double_hashing: ThresholdEstimate
    unaligned: ThresholdEstimate
    coupled_peel: CurvePoint
    double_tol: float = 0.015
    unaligned_floor: float = 0.91
    coupled_floor: float = 0.90

    @property
    def double_matches(self) -> bool:
        return abs(self.double_hashing.estimate - self.independent.estimate) <= self.double_tol

    @property
    def unaligned_exceeds(self) -> bool:
        return self.unaligned.estimate > self.unaligned_floor

    @property
    def coupled_peels(self) -> bool:
        return self.coupled_peel.fraction >= self.coupled_floor

    @property
    def all_pass(self) -> bool:
        return self.double_matches and self.unaligned_exceeds and self.coupled_peels


def variant_comparisons(plan: TrialPlan, m: int = 100_000) -> VariantReport:
    """Three paired experiments: double hashing tracks the independent
    threshold, unaligned windows beat the aligned-bucket threshold, and
    spatial coupling keeps peeling alive above the plain peeling threshold."""
    ind = estimate_threshold(Cuckoo(3), m, plan.subplan(1))
    dbl = estimate_threshold(Cuckoo(3, mode="double"), m, plan.subplan(2))
    una = estimate_threshold(Cuckoo(2, ell=2, mode="unaligned"), m, plan.subplan(3))
    coup = success_fraction(Peel(3, mode="coupled", eps=0.05), m, 0.85,
                            plan.subplan(4), experiment="variants")
    return VariantReport(ind, dbl, una, coup)
