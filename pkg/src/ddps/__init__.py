"""Edge-offloading pricing simulator.

A deterministic, time-slotted model of one edge server selling CPU cycles
to energy-harvesting devices. Ships the log-priced differential scheme and
four reference pricing schemes behind one interface, the per-task
offloading decision, the two-class FCFS admission loop with surplus
redistribution, and an experiment CLI.
"""

from .energy import (
    BatteryState,
    EnergyParams,
    InsufficientEnergyError,
    OffloadThresholds,
)
from .policy import DecisionKind, DropReason, OffloadDecision, TaskRequest, decide
from .pricing import STRATEGIES, PricingEngine, PricingParams, Quote
from .scheduler import ServerState, SlotOutcome, run_slot
from .simulation import MetricsRecord, RunResult, Scenario, run, sweep

__version__ = "0.1.0"

__all__ = [
    "BatteryState",
    "EnergyParams",
    "InsufficientEnergyError",
    "OffloadThresholds",
    "DecisionKind",
    "DropReason",
    "OffloadDecision",
    "TaskRequest",
    "decide",
    "STRATEGIES",
    "PricingEngine",
    "PricingParams",
    "Quote",
    "ServerState",
    "SlotOutcome",
    "run_slot",
    "MetricsRecord",
    "RunResult",
    "Scenario",
    "run",
    "sweep",
    "__version__",
]
