"""Pure state-transition functions for the size-counting protocols and primitives.

The full protocol keeps four variables per agent (max, lastMax, time,
interactions) and runs four guarded blocks top-to-bottom in every interaction,
followed by an unconditional countdown step.  Only the initiating agent u
mutates; the responder v is read-only.  The simplified protocol drops the
trailing estimate and the backup sampling.  The one-sided primitives
(epidemic, CHVP, CLVP) operate on a single integer value per agent.

All randomness is drawn from an injected CoinSource, so every function here is
deterministic given its inputs and the coin's bit sequence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .sampling import CoinSource, geometric_sample, grv_max


class Phase(enum.Enum):
    EXCHANGE = "exchange"
    HOLD = "hold"
    RESET = "reset"


class Event(enum.Enum):
    """What happened to agent u during one update (for run logs and analysis)."""

    WRAP_AROUND_RESET = "wrap-around-reset"
    RESET_TO_EXCHANGE_RESET = "reset-to-exchange-reset"
    HOLD_MISMATCH_RESET = "hold-mismatch-reset"
    BACKUP_GRV_GENERATED = "backup-grv-generated"
    BACKUP_RESET = "backup-reset"
    MAX_ADOPTED = "max-adopted"
    LAST_MAX_MERGED = "last-max-merged"


#: Events that constitute a reset (a clock "tick"): the agent replaced its max
#: with a fresh GRV, rewound time, and zeroed its interaction count.
RESET_EVENTS = frozenset(
    {
        Event.WRAP_AROUND_RESET,
        Event.RESET_TO_EXCHANGE_RESET,
        Event.HOLD_MISMATCH_RESET,
        Event.BACKUP_RESET,
    }
)


@dataclass(frozen=True, slots=True)
class AgentState:
    """Per-agent variables: current estimate, trailing estimate, countdown, activity count."""

    max: int
    last_max: int
    time: int
    interactions: int = 0

    def effective_max(self) -> int:
        return self.max if self.max >= self.last_max else self.last_max


@dataclass(frozen=True, slots=True)
class ProtocolParams:
    """Protocol constants.

    tau1 > tau2 > tau3 scale the phase boundaries by the agent's effective
    estimate; tau_prime bounds interactions between resets before a backup GRV
    is drawn; overestimation_factor scales stored maxima so backup draws only
    win when they are far larger.  Logarithms are base 2 throughout (the GRVs
    are Geom(1/2), so maxima concentrate near log2 of the sample count).
    """

    k: int
    tau1: int
    tau2: int
    tau3: int
    tau_prime: int
    overestimation_factor: int = 1
    log_base: int = 2

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")
        if not (self.tau1 > self.tau2 > self.tau3 > 0):
            raise ValueError("phase constants must satisfy tau1 > tau2 > tau3 > 0")
        if self.tau_prime < 1:
            raise ValueError("tau_prime must be positive")
        if self.overestimation_factor < 1:
            raise ValueError("overestimation_factor must be >= 1")
        if self.log_base != 2:
            raise ValueError("only log base 2 is supported")

    @classmethod
    def empirical(cls) -> "ProtocolParams":
        """Constants used for simulation-scale runs (no overestimation)."""
        return cls(k=16, tau1=6, tau2=4, tau3=2, tau_prime=20, overestimation_factor=1)

    @classmethod
    def theory(cls, k: int = 2) -> "ProtocolParams":
        """Constants for which the analytical guarantees are stated."""
        if k < 2:
            raise ValueError("theory profile requires k >= 2")
        return cls(
            k=k,
            tau1=1140 * k,
            tau2=1119 * k,
            tau3=454 * k,
            tau_prime=4350 * k,
            overestimation_factor=20 * (k + 1),
        )


@dataclass(frozen=True, slots=True)
class UpdateOutcome:
    new_state: AgentState
    events: frozenset[Event]


def phase_of(s: AgentState, p: ProtocolParams) -> Phase:
    """Classify an agent into exactly one phase.

    Boundaries scale with the effective estimate E = max(max, lastMax):
    exchange for time >= tau2*E, hold for tau3*E <= time < tau2*E, reset
    below that (including non-positive time, which triggers the wrap-around).
    """
    e = s.effective_max()
    if s.time >= p.tau2 * e:
        return Phase.EXCHANGE
    if s.time >= p.tau3 * e:
        return Phase.HOLD
    return Phase.RESET


def init_state(p: ProtocolParams) -> AgentState:
    """State of a newly added agent: unit estimates, full countdown."""
    return AgentState(max=1, last_max=1, time=p.tau1, interactions=0)


def init_with_estimate(est: int, p: ProtocolParams) -> AgentState:
    """Start with a preloaded size estimate (time scaled to match)."""
    if est < 1:
        raise ValueError("estimate must be >= 1")
    return AgentState(max=est, last_max=est, time=p.tau1 * est, interactions=0)


def dsc_update(
    u: AgentState, v: AgentState, p: ProtocolParams, coin: CoinSource
) -> UpdateOutcome:
    """One interaction of the full dynamic size counting protocol.

    The blocks run strictly top-to-bottom against u's evolving state, while
    all reads of v use its pre-interaction values:

    1. reset      -- wrap-around, reset->exchange contact, or estimate mismatch
                     outside the exchange phase; draws a fresh scaled GRV batch
    2. backup     -- too many interactions since the last reset; draws an
                     unscaled batch, adopted only if it beats the stored max
    3. exchange   -- adopt a larger max (and its trailing estimate) inside the
                     exchange phase
    4. merge      -- pull up lastMax between agents that agree on max, except
                     across an exchange/reset phase boundary
    5. countdown  -- time <- max(time_u, time_v) - 1; count the interaction
    """
    f = p.overestimation_factor
    mu, lu, tu, iu = u.max, u.last_max, u.time, u.interactions
    mv, lv, tv = v.max, v.last_max, v.time

    ev = mv if mv >= lv else lv
    v_exchange = tv >= p.tau2 * ev
    v_reset = tv < p.tau3 * ev

    eu = mu if mu >= lu else lu
    u_exchange = tu >= p.tau2 * eu
    u_reset = tu < p.tau3 * eu

    events: set[Event] = set()

    # Block 1: reset with a fresh scaled GRV batch.
    if tu <= 0:
        trigger = Event.WRAP_AROUND_RESET
    elif u_reset and v_exchange:
        trigger = Event.RESET_TO_EXCHANGE_RESET
    elif not u_exchange and mu != mv:
        trigger = Event.HOLD_MISMATCH_RESET
    else:
        trigger = None
    if trigger is not None:
        g = f * grv_max(p.k, coin)
        tu = p.tau1 * (mu if mu >= g else g)
        iu = 0
        lu = mu
        mu = g
        events.add(trigger)

    # Block 2: backup GRV once the interaction budget is exceeded.
    if iu > p.tau_prime * (mu if mu >= lu else lu):
        iu = 0
        g = grv_max(p.k, coin)
        events.add(Event.BACKUP_GRV_GENERATED)
        if g > mu:
            mu = f * g
            tu = p.tau1 * mu
            events.add(Event.BACKUP_RESET)

    # Block 3: adopt a larger maximum while both agents are exchanging.
    eu = mu if mu >= lu else lu
    if tu >= p.tau2 * eu and v_exchange and mu < mv:
        tu = p.tau1 * mv
        mu = mv
        lu = lv
        events.add(Event.MAX_ADOPTED)

    # Block 4: merge trailing estimates on agreement, except exchange-vs-reset.
    if mu == mv:
        eu = mu if mu >= lu else lu
        if not (tu >= p.tau2 * eu and v_reset):
            if lv > lu:
                lu = lv
            events.add(Event.LAST_MAX_MERGED)

    # Block 5: countdown with higher value propagation.
    tu = (tu if tu >= tv else tv) - 1
    iu += 1

    return UpdateOutcome(AgentState(mu, lu, tu, iu), frozenset(events))


def simplified_update(
    u: AgentState, v: AgentState, p: ProtocolParams, coin: CoinSource
) -> UpdateOutcome:
    """One interaction of the simplified protocol (single GRV, no trailing estimate).

    lastMax mirrors max so the shared AgentState type and phase classifier
    apply unchanged; interactions stays 0.
    """
    mu, tu = u.max, u.time
    mv, tv = v.max, v.time

    ev = v.effective_max()
    v_exchange = tv >= p.tau2 * ev
    eu = u.effective_max()
    u_exchange = tu >= p.tau2 * eu
    u_reset = tu < p.tau3 * eu

    events: set[Event] = set()

    if tu <= 0:
        trigger = Event.WRAP_AROUND_RESET
    elif u_reset and v_exchange:
        trigger = Event.RESET_TO_EXCHANGE_RESET
    elif not u_exchange and mu != mv:
        trigger = Event.HOLD_MISMATCH_RESET
    else:
        trigger = None
    if trigger is not None:
        g = geometric_sample(coin)
        tu = p.tau1 * (mu if mu >= g else g)
        mu = g
        events.add(trigger)

    if tu >= p.tau2 * mu and v_exchange and mu < mv:
        tu = p.tau1 * mv
        mu = mv
        events.add(Event.MAX_ADOPTED)

    tu = (tu if tu >= tv else tv) - 1

    return UpdateOutcome(AgentState(mu, mu, tu, 0), frozenset(events))


def epidemic_step(u: int, v: int) -> int:
    """One-sided epidemic: the initiator adopts the larger value."""
    return u if u >= v else v


def chvp_step(u: int, v: int) -> int:
    """Countdown with higher value propagation: max of both values, minus one."""
    return (u if u >= v else v) - 1


def clvp_step(u: int, v: int) -> int:
    """Count-up with lower value propagation (the countdown's analysis mirror)."""
    return (u if u <= v else v) + 1
