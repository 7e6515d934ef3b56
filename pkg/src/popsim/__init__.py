"""Population-protocol simulator: dynamic size counting and loosely-stabilizing phase clocks."""

__version__ = "0.1.0"

from .protocols import (  # noqa: F401
    AgentState,
    Event,
    Phase,
    ProtocolParams,
    UpdateOutcome,
    chvp_step,
    clvp_step,
    dsc_update,
    epidemic_step,
    init_state,
    init_with_estimate,
    phase_of,
    simplified_update,
)
from .sampling import (  # noqa: F401
    CoinExhausted,
    CoinSource,
    ScriptedCoin,
    SeededStream,
    geometric_sample,
    grv_max,
)
from .engine import (  # noqa: F401
    AdversaryEvent,
    ExperimentConfig,
    Population,
    RemovalPolicy,
    RunRecord,
    Snapshot,
    apply_adversary_event,
    run,
    run_batch,
    step,
)
