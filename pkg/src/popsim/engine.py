"""Random scheduler over a population: interactions, adversary events, snapshots.

A run initializes agents, repeatedly applies one-sided interactions between
uniformly drawn ordered pairs, and records aggregate snapshots every n
interactions (one unit of parallel time at the current size).  Adversary
events add or remove agents at snapshot-grain boundaries so the cadence stays
aligned and parallel time accumulates exactly 1/n per interaction.

Large runs execute inside the compiled kernels; `step` drives the same
semantics one interaction at a time through the pure protocol functions for
tests and small-scale experiments.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .protocols import (
    AgentState,
    ProtocolParams,
    UpdateOutcome,
    init_state,
    init_with_estimate,
)
from .sampling import SeededStream, derive_run_seed

AGENT_PROTOCOLS = ("dsc", "simplified")
VALUE_PROTOCOLS = ("epidemic", "chvp", "clvp")
PROTOCOLS = AGENT_PROTOCOLS + VALUE_PROTOCOLS

_VALUE_RULES = {
    "epidemic": _kernels.RULE_EPIDEMIC,
    "chvp": _kernels.RULE_CHVP,
    "clvp": _kernels.RULE_CLVP,
}

# thresholds 2^0 .. 2^62; bit length of x >= 1 is the count of powers <= x
_POW2 = (1 << np.arange(63, dtype=np.int64)).astype(np.int64)


class PopulationTooSmall(Exception):
    """Raised when stepping or removal would leave fewer than two agents."""


class ConfigError(ValueError):
    """Invalid experiment configuration; `field` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class RemovalPolicy(enum.Enum):
    UNIFORM_RANDOM = "uniformRandom"
    LARGEST_ESTIMATE_FIRST = "largestEstimateFirst"
    SMALLEST_ESTIMATE_FIRST = "smallestEstimateFirst"


@dataclass(frozen=True, slots=True)
class AdversaryEvent:
    """Timed population change: add `count` fresh agents or remove `count` by policy."""

    at_parallel_time: float
    action: str  # "add" | "remove"
    count: int
    policy: RemovalPolicy = RemovalPolicy.UNIFORM_RANDOM

    def __post_init__(self) -> None:
        if self.action not in ("add", "remove"):
            raise ValueError("action must be 'add' or 'remove'")
        if self.count < 0:
            raise ValueError("count must be non-negative")


@dataclass(frozen=True, slots=True)
class Snapshot:
    """Aggregates sampled once per unit of parallel time."""

    parallel_time: float
    n: int
    est_min: float
    est_median: float
    est_max: float
    phase_exchange: int
    phase_hold: int
    phase_reset: int
    resets: int
    max_bits: int


@dataclass(slots=True)
class InteractionRecord:
    u: int
    v: int
    events: frozenset


def _bitlen(values: np.ndarray) -> np.ndarray:
    """Bit length of non-negative int64 values, with bitlen(0) counted as 1."""
    return np.maximum(np.searchsorted(_POW2, values, side="right"), 1)


def lower_median(values: np.ndarray) -> float:
    """Deterministic median: the lower of the two central values for even counts."""
    mid = (values.shape[0] - 1) // 2
    return float(np.partition(values, mid)[mid])


class Population:
    """Indexable collection of agent states plus exact parallel-time accounting.

    Agent identity is a stable id assigned at creation; array indexes shift
    under swap-removal, ids never do.
    """

    def __init__(self, states: Sequence[AgentState]):
        if len(states) < 2:
            raise PopulationTooSmall("population too small")
        self.maxv = np.array([s.max for s in states], dtype=np.int64)
        self.lastmax = np.array([s.last_max for s in states], dtype=np.int64)
        self.timev = np.array([s.time for s in states], dtype=np.int64)
        self.inter = np.array([s.interactions for s in states], dtype=np.int64)
        self.ids = np.arange(len(states), dtype=np.int64)
        self._next_id = len(states)
        self.interaction_count = 0
        self._clock_base = Fraction(0)
        self._clock_num = 0

    @classmethod
    def initial(
        cls, n0: int, params: ProtocolParams, initial_estimate: int | None = None
    ) -> "Population":
        if initial_estimate is None:
            proto = init_state(params)
        else:
            proto = init_with_estimate(initial_estimate, params)
        return cls([proto] * n0)

    @property
    def n(self) -> int:
        return int(self.maxv.shape[0])

    @property
    def parallel_clock(self) -> float:
        return float(self._clock_base + Fraction(self._clock_num, self.n))

    def exact_clock(self) -> Fraction:
        return self._clock_base + Fraction(self._clock_num, self.n)

    def _tick_clock(self) -> None:
        self._clock_num += 1
        if self._clock_num == self.n:
            self._clock_base += 1
            self._clock_num = 0

    def _fold_clock(self) -> None:
        # called before n changes so accumulated fractions keep their old denominator
        if self._clock_num:
            self._clock_base += Fraction(self._clock_num, self.n)
            self._clock_num = 0

    def get_state(self, i: int) -> AgentState:
        return AgentState(
            int(self.maxv[i]), int(self.lastmax[i]), int(self.timev[i]), int(self.inter[i])
        )

    def set_state(self, i: int, s: AgentState) -> None:
        self.maxv[i] = s.max
        self.lastmax[i] = s.last_max
        self.timev[i] = s.time
        self.inter[i] = s.interactions

    def effective_max(self) -> np.ndarray:
        return np.maximum(self.maxv, self.lastmax)

    def append_agents(self, states: Sequence[AgentState]) -> None:
        if not states:
            return
        self._fold_clock()
        count = len(states)
        self.maxv = np.concatenate([self.maxv, [s.max for s in states]]).astype(np.int64)
        self.lastmax = np.concatenate(
            [self.lastmax, [s.last_max for s in states]]
        ).astype(np.int64)
        self.timev = np.concatenate([self.timev, [s.time for s in states]]).astype(np.int64)
        self.inter = np.concatenate(
            [self.inter, [s.interactions for s in states]]
        ).astype(np.int64)
        new_ids = np.arange(self._next_id, self._next_id + count, dtype=np.int64)
        self.ids = np.concatenate([self.ids, new_ids])
        self._next_id += count

    def remove_indices(self, indices: np.ndarray) -> None:
        keep = np.ones(self.n, dtype=bool)
        keep[indices] = False
        if keep.sum() < 2:
            raise PopulationTooSmall("removal would leave fewer than 2 agents")
        self._fold_clock()
        self.maxv = self.maxv[keep]
        self.lastmax = self.lastmax[keep]
        self.timev = self.timev[keep]
        self.inter = self.inter[keep]
        self.ids = self.ids[keep]


class ValuePopulation:
    """Single-integer-per-agent population for the one-sided primitives."""

    def __init__(self, values: Sequence[int]):
        if len(values) < 2:
            raise PopulationTooSmall("population too small")
        self.values = np.asarray(values, dtype=np.int64).copy()
        self.ids = np.arange(len(values), dtype=np.int64)
        self.interaction_count = 0
        self._clock_base = Fraction(0)
        self._clock_num = 0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def parallel_clock(self) -> float:
        return float(self._clock_base + Fraction(self._clock_num, self.n))

    def exact_clock(self) -> Fraction:
        return self._clock_base + Fraction(self._clock_num, self.n)

    def _tick_clock(self) -> None:
        self._clock_num += 1
        if self._clock_num == self.n:
            self._clock_base += 1
            self._clock_num = 0

    def get_state(self, i: int) -> int:
        return int(self.values[i])

    def set_state(self, i: int, v: int) -> None:
        self.values[i] = v


def draw_pair(n: int, stream: SeededStream) -> tuple[int, int]:
    """Ordered pair (u, v), u != v, exactly uniform over the n(n-1) pairs."""
    u = stream.randbelow(n)
    vr = stream.randbelow(n - 1)
    return u, vr + 1 if vr >= u else vr


def step(pop, update_fn: Callable, stream: SeededStream) -> InteractionRecord:
    """One interaction: draw an ordered pair, update the initiator only.

    `update_fn(u_state, v_state)` returns an UpdateOutcome for agent-state
    protocols or a plain value for the primitives.  For bit-exact agreement
    with the compiled kernels, bind the protocol's coin to the same `stream`.
    """
    n = pop.n
    if n < 2:
        raise PopulationTooSmall("population too small")
    u, v = draw_pair(n, stream)
    out = update_fn(pop.get_state(u), pop.get_state(v))
    if isinstance(out, UpdateOutcome):
        pop.set_state(u, out.new_state)
        events = out.events
    else:
        pop.set_state(u, out)
        events = frozenset()
    pop.interaction_count += 1
    pop._tick_clock()
    return InteractionRecord(u=u, v=v, events=events)


def apply_adversary_event(
    pop: Population,
    event: AdversaryEvent,
    params: ProtocolParams,
    stream: SeededStream | None = None,
) -> None:
    """Apply one add/remove event in place.

    Uniform removal consumes the run's randomness stream (swap-removal);
    targeted policies order agents by effective estimate with ties broken by
    stable id.
    """
    if event.action == "add":
        pop.append_agents([init_state(params)] * event.count)
        return
    count = event.count
    if count == 0:
        return
    if pop.n - count < 2:
        raise PopulationTooSmall("removal would leave fewer than 2 agents")
    if event.policy is RemovalPolicy.UNIFORM_RANDOM:
        if stream is None:
            raise ValueError("uniform removal needs the run's randomness stream")
        pop._fold_clock()
        m = pop.n
        arrays = [pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids]
        for _ in range(count):
            j = stream.randbelow(m)
            m -= 1
            for a in arrays:
                a[j] = a[m]
        pop.maxv = pop.maxv[:m].copy()
        pop.lastmax = pop.lastmax[:m].copy()
        pop.timev = pop.timev[:m].copy()
        pop.inter = pop.inter[:m].copy()
        pop.ids = pop.ids[:m].copy()
    else:
        est = pop.effective_max()
        if event.policy is RemovalPolicy.LARGEST_ESTIMATE_FIRST:
            order = np.lexsort((pop.ids, -est))
        else:
            order = np.lexsort((pop.ids, est))
        pop.remove_indices(order[:count])


@dataclass
class ExperimentConfig:
    """Resolved description of one batch of runs (file parsing lives in cli)."""

    n0: int
    duration: float
    runs: int = 1
    master_seed: int = 0
    profile: str = "empirical"  # "empirical" | "theory" | "custom"
    theory_k: int = 2
    custom_params: ProtocolParams | None = None
    protocol: str = "dsc"
    initial_estimate: int | None = None
    adversary_schedule: list[AdversaryEvent] = field(default_factory=list)
    snapshot_every_n: bool = True
    collect_reset_log: bool = False

    def params(self) -> ProtocolParams:
        if self.profile == "empirical":
            return ProtocolParams.empirical()
        if self.profile == "theory":
            return ProtocolParams.theory(self.theory_k)
        if self.profile == "custom":
            if self.custom_params is None:
                raise ConfigError("paramsProfile", "custom profile needs parameters")
            return self.custom_params
        raise ConfigError("paramsProfile", f"unknown profile {self.profile!r}")

    def validate(self) -> None:
        if self.n0 < 2:
            raise ConfigError("n0", "need at least 2 agents")
        if not self.duration > 0:
            raise ConfigError("durationParallelTime", "must be positive")
        if self.runs < 1:
            raise ConfigError("runs", "must be at least 1")
        if not isinstance(self.master_seed, int):
            raise ConfigError("masterSeed", "must be resolved to an integer before running")
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"unknown protocol {self.protocol!r}")
        if self.initial_estimate is not None and self.initial_estimate < 1:
            raise ConfigError("initialEstimate", "must be >= 1")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError("paramsProfile", str(exc)) from exc
        if self.adversary_schedule and self.protocol not in AGENT_PROTOCOLS:
            raise ConfigError(
                "adversarySchedule", "adversary events need an agent-state protocol"
            )
        last_t = 0.0
        n = self.n0
        for i, ev in enumerate(self.adversary_schedule):
            if ev.at_parallel_time < last_t:
                raise ConfigError(
                    "adversarySchedule", f"event {i} out of order (times must be non-decreasing)"
                )
            last_t = ev.at_parallel_time
            if ev.action == "add":
                n += ev.count
            else:
                n -= ev.count
                if n < 2:
                    raise ConfigError(
                        "adversarySchedule", f"event {i} would leave fewer than 2 agents"
                    )


@dataclass
class RunRecord:
    """Everything one run produced: seed, parameters, snapshots, optional reset log."""

    run_index: int
    seed: int
    protocol: str
    params: ProtocolParams
    snapshots: list[Snapshot]
    reset_ids: np.ndarray | None = None
    reset_times: np.ndarray | None = None
    final_n: int = 0


def _agent_snapshot(pop: Population, params: ProtocolParams, t: float, resets: int) -> Snapshot:
    eff = pop.effective_max()
    est = eff / params.overestimation_factor
    exchange = int(np.count_nonzero(pop.timev >= params.tau2 * eff))
    reset = int(np.count_nonzero(pop.timev < params.tau3 * eff))
    bits = (
        _bitlen(pop.maxv)
        + _bitlen(pop.lastmax)
        + _bitlen(np.abs(pop.timev))
        + 1
        + _bitlen(pop.inter)
    )
    return Snapshot(
        parallel_time=t,
        n=pop.n,
        est_min=float(est.min()),
        est_median=lower_median(est),
        est_max=float(est.max()),
        phase_exchange=exchange,
        phase_hold=pop.n - exchange - reset,
        phase_reset=reset,
        resets=resets,
        max_bits=int(bits.max()),
    )


def _value_snapshot(pop: ValuePopulation, t: float, resets: int = 0) -> Snapshot:
    vals = pop.values.astype(np.float64)
    bits = _bitlen(np.abs(pop.values)) + 1
    # primitives have no phases; report all agents under the exchange column
    return Snapshot(
        parallel_time=t,
        n=pop.n,
        est_min=float(vals.min()),
        est_median=lower_median(vals),
        est_max=float(vals.max()),
        phase_exchange=pop.n,
        phase_hold=0,
        phase_reset=0,
        resets=resets,
        max_bits=int(bits.max()),
    )


def initial_values(protocol: str, n0: int, initial_estimate: int | None) -> np.ndarray:
    """Starting values for the primitives: epidemic seeds one informed agent."""
    if protocol == "epidemic":
        values = np.zeros(n0, dtype=np.int64)
        values[0] = 1 if initial_estimate is None else initial_estimate
        return values
    base = 0 if initial_estimate is None else initial_estimate
    return np.full(n0, base, dtype=np.int64)


def run(
    config: ExperimentConfig,
    protocol: str | None = None,
    run_index: int = 0,
    seed: int | None = None,
) -> RunRecord:
    """Execute one seeded run of the configured protocol.

    Snapshots are taken every n interactions (n re-read after adversary
    events); each pending adversary event fires at the first grain boundary
    at or after its scheduled time, after that boundary's snapshot.
    """
    config.validate()
    protocol = protocol or config.protocol
    if protocol not in PROTOCOLS:
        raise ConfigError("protocol", f"unknown protocol {protocol!r}")
    params = config.params()
    if seed is None:
        seed = derive_run_seed(config.master_seed, run_index)
    stream = SeededStream(seed)

    total_grains = max(1, math.ceil(config.duration))
    pending = sorted(
        config.adversary_schedule, key=lambda e: e.at_parallel_time
    )
    snapshots: list[Snapshot] = []
    reset_ids: list[np.ndarray] = []
    reset_times: list[np.ndarray] = []
    want_log = config.collect_reset_log

    if protocol in AGENT_PROTOCOLS:
        pop = Population.initial(config.n0, params, config.initial_estimate)
        log_id_buf = np.empty(0, dtype=np.int64)
        log_t_buf = np.empty(0, dtype=np.float64)
        snapshots.append(_agent_snapshot(pop, params, 0.0, 0))
        units = 0
        while pending and pending[0].at_parallel_time <= units:
            apply_adversary_event(pop, pending.pop(0), params, stream)
        rng = stream.export_state()
        while units < total_grains:
            n = pop.n
            if want_log and log_id_buf.shape[0] < n:
                log_id_buf = np.empty(n, dtype=np.int64)
                log_t_buf = np.empty(n, dtype=np.float64)
            if protocol == "dsc":
                resets, nlog = _kernels.dsc_grain(
                    pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
                    n, float(units),
                    params.tau1, params.tau2, params.tau3, params.tau_prime,
                    params.k, params.overestimation_factor,
                    log_id_buf, log_t_buf, want_log,
                )
            else:
                resets, nlog = _kernels.simplified_grain(
                    pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
                    n, float(units),
                    params.tau1, params.tau2, params.tau3,
                    log_id_buf, log_t_buf, want_log,
                )
            if want_log and nlog:
                reset_ids.append(log_id_buf[:nlog].copy())
                reset_times.append(log_t_buf[:nlog].copy())
            pop.interaction_count += n
            pop._clock_base += 1
            units += 1
            if config.snapshot_every_n or units == total_grains:
                snapshots.append(_agent_snapshot(pop, params, float(units), int(resets)))
            while pending and pending[0].at_parallel_time <= units:
                stream.import_state(rng)
                apply_adversary_event(pop, pending.pop(0), params, stream)
                rng = stream.export_state()
        final_n = pop.n
    else:
        rng = stream.export_state()
        vpop = ValuePopulation(initial_values(protocol, config.n0, config.initial_estimate))
        rule = _VALUE_RULES[protocol]
        snapshots.append(_value_snapshot(vpop, 0.0))
        units = 0
        while units < total_grains:
            _kernels.value_grain(vpop.values, rng, vpop.n, rule)
            vpop.interaction_count += vpop.n
            vpop._clock_base += 1
            units += 1
            if config.snapshot_every_n or units == total_grains:
                snapshots.append(_value_snapshot(vpop, float(units)))
        final_n = vpop.n

    record = RunRecord(
        run_index=run_index,
        seed=seed,
        protocol=protocol,
        params=params,
        snapshots=snapshots,
        final_n=final_n,
    )
    if want_log:
        if reset_ids:
            record.reset_ids = np.concatenate(reset_ids)
            record.reset_times = np.concatenate(reset_times)
        else:
            record.reset_ids = np.empty(0, dtype=np.int64)
            record.reset_times = np.empty(0, dtype=np.float64)
    return record


def run_batch(config: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """Run all configured runs; results are ordered by run index regardless of jobs."""
    config.validate()
    indices = range(config.runs)
    if jobs <= 1 or config.runs == 1:
        return [run(config, run_index=i) for i in indices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run, config, None, i) for i in indices]
        return [f.result() for f in futures]
