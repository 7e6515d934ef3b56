"""Observables and Monte Carlo verdicts over populations and run records.

Includes the estimate extraction used in all reports, the synchronized-
configuration predicate, reset-burst detection for the phase-clock structure,
and statistical checkers that validate the concentration bounds the protocol
relies on (GRV maxima, epidemic completion, countdown drift, scheduler
participation) at configurable scale.

Naming note: the synchronized-configuration definition speaks of a "wait"
phase between exchange and reset; that is the hold phase (the terms are
aliases), and this module uses hold throughout.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .engine import Population, lower_median
from .protocols import AgentState, Phase, ProtocolParams, phase_of
from .sampling import CoinSource, SeededStream, derive_run_seed, grv_max


def estimate_of(s: AgentState, p: ProtocolParams) -> float:
    """Reported size estimate: the larger of max/lastMax, overestimation removed."""
    return s.effective_max() / p.overestimation_factor


def memory_bits(s: AgentState) -> int:
    """Bits to store the four variables: bit lengths plus a sign bit for time.

    Zero-valued fields still occupy one bit.
    """

    def bl(x: int) -> int:
        return max(int(x).bit_length(), 1)

    return bl(s.max) + bl(s.last_max) + bl(abs(s.time)) + 1 + bl(s.interactions)


@dataclass(frozen=True, slots=True)
class SyncReport:
    is_synchronized: bool
    common_max: int | None
    violations: tuple[str, ...]


def is_synchronized(
    pop: Population, p: ProtocolParams, interactions_time: float | None = None
) -> SyncReport:
    """Evaluate the synchronized-configuration predicate, naming each violation.

    Checks: (a) one shared max and one shared lastMax, both within
    [0.5*log2 n, 40(k+1)^2*log2 n]; (b) occupied phases within
    {exchange, hold} or {hold, reset}; (c) every countdown strictly below
    tau1 * M for the shared effective maximum M.  The interactions ceiling
    (d) is opt-in via `interactions_time` (parallel time since the last
    global reset burst) because that reference point is a construct of the
    convergence analysis, not an observable of the protocol.
    """
    n = pop.n
    violations: list[str] = []
    shared_max = bool(np.all(pop.maxv == pop.maxv[0]))
    shared_last = bool(np.all(pop.lastmax == pop.lastmax[0]))
    if not shared_max:
        violations.append("commonMax")
    if not shared_last:
        violations.append("commonLastMax")
    log_n = math.log2(n)
    lo, hi = 0.5 * log_n, 40 * (p.k + 1) ** 2 * log_n
    if shared_max and not lo <= int(pop.maxv[0]) <= hi:
        violations.append("maxRange")
    if shared_last and not lo <= int(pop.lastmax[0]) <= hi:
        violations.append("lastMaxRange")

    eff = pop.effective_max()
    n_exchange = int(np.count_nonzero(pop.timev >= p.tau2 * eff))
    n_reset = int(np.count_nonzero(pop.timev < p.tau3 * eff))
    n_hold = n - n_exchange - n_reset
    occupied = {
        phase
        for phase, count in (
            (Phase.EXCHANGE, n_exchange),
            (Phase.HOLD, n_hold),
            (Phase.RESET, n_reset),
        )
        if count
    }
    if not (occupied <= {Phase.EXCHANGE, Phase.HOLD} or occupied <= {Phase.HOLD, Phase.RESET}):
        violations.append("phase-window")

    m_global = int(eff.max())
    if np.any(pop.timev >= p.tau1 * m_global):
        violations.append("timeBound")

    if interactions_time is not None and interactions_time > 0:
        ceiling = 2 * interactions_time * (1 + math.sqrt(p.k / interactions_time)) * log_n
        if np.any(pop.inter > ceiling):
            violations.append("interactionsCeiling")

    common = m_global if (shared_max and shared_last) else None
    return SyncReport(
        is_synchronized=not violations,
        common_max=common,
        violations=tuple(violations),
    )


@dataclass(frozen=True, slots=True)
class Burst:
    """One cluster of reset events: the clock's tick window."""

    start: float
    end: float
    resets_per_agent: Counter

    @property
    def size(self) -> int:
        return sum(self.resets_per_agent.values())

    def every_agent_exactly_once(self, live_agents: int) -> bool:
        return len(self.resets_per_agent) == live_agents and all(
            c == 1 for c in self.resets_per_agent.values()
        )


@dataclass(frozen=True, slots=True)
class RoundReport:
    round_boundaries: list[float]  # burst start times, strictly increasing
    bursts: list[Burst]
    round_lengths: list[float]  # gaps between consecutive burst starts


def _n_at(n_trace, t: float) -> int:
    if isinstance(n_trace, int):
        return n_trace
    times = [pt for pt, _ in n_trace]
    idx = bisect_right(times, t) - 1
    return n_trace[max(idx, 0)][1]


def detect_rounds(reset_ids, reset_times, n_trace, gap_factor: float = 0.5) -> RoundReport:
    """Cluster reset events into bursts by gap thresholding.

    A new burst starts when the gap to the previous reset exceeds
    gap_factor * log2(n) parallel time.  `n_trace` is either the fixed
    population size or a list of (time, n) steps for runs with adversaries.
    """
    times = np.asarray(reset_times, dtype=np.float64)
    ids = np.asarray(reset_ids, dtype=np.int64)
    if times.size == 0:
        raise ValueError("no resets recorded")
    order = np.argsort(times, kind="stable")
    times = times[order]
    ids = ids[order]

    bursts: list[Burst] = []
    start = 0
    for i in range(1, times.size):
        threshold = gap_factor * math.log2(_n_at(n_trace, float(times[i])))
        if times[i] - times[i - 1] > threshold:
            bursts.append(
                Burst(float(times[start]), float(times[i - 1]), Counter(ids[start:i].tolist()))
            )
            start = i
    bursts.append(
        Burst(float(times[start]), float(times[-1]), Counter(ids[start:].tolist()))
    )
    boundaries = [b.start for b in bursts]
    lengths = [b2 - b1 for b1, b2 in zip(boundaries, boundaries[1:])]
    return RoundReport(round_boundaries=boundaries, bursts=bursts, round_lengths=lengths)


@dataclass(slots=True)
class BoundCheck:
    """Outcome of a Monte Carlo validation of one concentration bound."""

    name: str
    trials: int
    successes: int
    required_fraction: float
    details: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def verdict(self) -> bool:
        return self.fraction >= self.required_fraction

    def summary(self) -> str:
        state = "PASS" if self.verdict else "FAIL"
        return (
            f"{self.name}: {state} ({self.successes}/{self.trials} = "
            f"{self.fraction:.4f}, required {self.required_fraction:.4f})"
        )


def check_grv_bounds(n: int, k: int, trials: int, coin: CoinSource) -> BoundCheck:
    """Draw k*n GRVs per trial and test 0.5*log2 n <= max <= 2(k+1)*log2 n.

    The requirement follows the bound's error probability, never below 0.99.
    """
    if n < 50:
        raise ValueError("n must be at least 50")
    if not 1 <= k <= n:
        raise ValueError("k must be in [1, n]")
    lo = 0.5 * math.log2(n)
    hi = 2 * (k + 1) * math.log2(n)
    successes = 0
    if isinstance(coin, SeededStream):
        state = coin.export_state()
        for _ in range(trials):
            m = int(_kernels.grv_max_of(state, k * n))
            successes += lo <= m <= hi
        coin.import_state(state)
    else:
        for _ in range(trials):
            m = grv_max(k * n, coin)
            successes += lo <= m <= hi
    required = max(0.99, 1 - 5 * n ** (-k))
    return BoundCheck(
        name="grv-max-bounds",
        trials=trials,
        successes=successes,
        required_fraction=required,
        details={"lo": lo, "hi": hi},
    )


def check_epidemic_time(
    n: int, k: int, runs: int = 100, master_seed: int = 0
) -> BoundCheck:
    """From one informed agent, require full infection within 4(k+1)*n*log2 n interactions."""
    budget = int(4 * (k + 1) * n * math.log2(n))
    successes = 0
    durations = []
    for r in range(runs):
        state = SeededStream(derive_run_seed(master_seed, r)).export_state()
        values = np.zeros(n, dtype=np.int64)
        values[0] = 1
        took = int(_kernels.epidemic_until_informed(values, state, budget))
        if took >= 0:
            successes += 1
            durations.append(took)
    return BoundCheck(
        name="epidemic-time",
        trials=runs,
        successes=successes,
        required_fraction=0.99,
        details={"budget": budget, "max_observed": max(durations, default=None)},
    )


def check_chvp_bounds(
    n: int, m: int, delta: int, k: int, runs: int = 100, master_seed: int = 0
) -> BoundCheck:
    """Countdown drift bounds after tau = 7n(delta + k*log2 n) interactions.

    From all agents at m: max <= m - delta and min >= m - 12(delta + k*log2 n).
    The max bound is additionally checked from values spread over {0..m}.
    """
    drift = delta + k * math.log2(n)
    min_floor = m - 12 * drift
    if not m > 12 * drift:
        raise ValueError("delta too large for m")
    tau = int(7 * n * drift)
    successes = 0
    for r in range(runs):
        state = SeededStream(derive_run_seed(master_seed, r)).export_state()
        flat = np.full(n, m, dtype=np.int64)
        _kernels.value_grain(flat, state, tau, _kernels.RULE_CHVP)
        ok = int(flat.max()) <= m - delta and int(flat.min()) >= min_floor
        spread = (np.arange(n, dtype=np.int64) * m) // (n - 1)
        _kernels.value_grain(spread, state, tau, _kernels.RULE_CHVP)
        ok = ok and int(spread.max()) <= m - delta
        successes += ok
    return BoundCheck(
        name="chvp-bounds",
        trials=runs,
        successes=successes,
        required_fraction=0.99,
        details={"tau": tau, "max_bound": m - delta, "min_bound": min_floor},
    )


def check_participation(
    n: int, c: int, k: int, runs: int = 20, master_seed: int = 0
) -> BoundCheck:
    """Initiation counts over c*log2 n parallel time stay within the two-sided bound.

    Success counts agent-run pairs with count in
    [c(1-sqrt(k/c))*log2 n, c(1+sqrt(k/c))*log2 n].
    """
    if not 0 < k < c:
        raise ValueError("need 0 < k < c")
    log_n = math.log2(n)
    steps = int(round(c * log_n * n))
    lo = c * (1 - math.sqrt(k / c)) * log_n
    hi = c * (1 + math.sqrt(k / c)) * log_n
    successes = 0
    for r in range(runs):
        state = SeededStream(derive_run_seed(master_seed, r)).export_state()
        counts = np.zeros(n, dtype=np.int64)
        _kernels.participation_counts(state, n, steps, counts)
        successes += int(np.count_nonzero((counts >= lo) & (counts <= hi)))
    return BoundCheck(
        name="participation",
        trials=n * runs,
        successes=successes,
        required_fraction=0.99,
        details={"lo": lo, "hi": hi, "steps": steps},
    )


@dataclass(frozen=True, slots=True)
class RelativeErrorPoint:
    parallel_time: float
    n: int
    e_min: float
    e_median: float
    e_max: float


def relative_error_stats(per_run_snapshots) -> list[RelativeErrorPoint]:
    """Per snapshot time: min/median/max across runs of (median estimate error).

    The error of a run at a snapshot is (est_median - log2 n) / log2 n with n
    the true size recorded in the snapshot.
    """
    by_time: dict[float, list[tuple[int, float]]] = {}
    for snapshots in per_run_snapshots:
        for snap in snapshots:
            e = (snap.est_median - math.log2(snap.n)) / math.log2(snap.n)
            by_time.setdefault(snap.parallel_time, []).append((snap.n, e))
    points = []
    for t in sorted(by_time):
        entries = by_time[t]
        errors = np.array([e for _, e in entries])
        points.append(
            RelativeErrorPoint(
                parallel_time=t,
                n=entries[0][0],
                e_min=float(errors.min()),
                e_median=lower_median(errors),
                e_max=float(errors.max()),
            )
        )
    return points


def phase_counts(pop: Population, p: ProtocolParams) -> tuple[int, int, int]:
    """(exchange, hold, reset) occupancy; always sums to n."""
    counts = Counter(phase_of(pop.get_state(i), p) for i in range(pop.n))
    return (
        counts.get(Phase.EXCHANGE, 0),
        counts.get(Phase.HOLD, 0),
        counts.get(Phase.RESET, 0),
    )
