"""Slot-by-slot admission, capacity accounting and settlement of the server.

Each slot the server first drains the deferral queue in arrival order,
then walks the fresh arrivals: grant while capacity covers the request,
defer when the deadline has slack, drop otherwise. Admission closes once
remaining capacity falls to the cutoff. Under the log-priced scheme any
surplus left after admission is handed to the granted tasks in proportion
to their offloaded bits, which shortens their runtimes and raises their
quotes. Payments settle at slot end; drops are charged to the penalty
account at the weight gamma.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

from .policy import DecisionKind, OffloadDecision, TaskRequest, expected_latency
from .pricing import PricingEngine

__all__ = [
    "SLOT_SECONDS",
    "ContractViolation",
    "ServerState",
    "QueueEntry",
    "GrantRecord",
    "DropRecord",
    "RedistributionRecord",
    "SlotOutcome",
    "run_slot",
    "redistribute_surplus",
    "penalty",
    "server_utility",
]

log = logging.getLogger(__name__)

SLOT_SECONDS = 1.0

# Slack below one nanosecond does not defer a task.
_TOL = 1e-9


class ContractViolation(RuntimeError):
    """A caller handed the scheduler something its contract forbids."""


@dataclass
class QueueEntry:
    task: TaskRequest
    decision: OffloadDecision


@dataclass
class GrantRecord:
    """One task granted capacity this slot."""

    task: TaskRequest
    decision: OffloadDecision
    F_i: float            # capacity held, after any surplus top-up
    q: float
    F_t_quote: float      # remaining capacity when the quote was made
    unit_price: float
    payment: float
    t_fact: float         # server processing time h*q/F_i at the final capacity
    latency: float        # full completion time of the plan at the final capacity
    waited_slots: int     # slots spent deferred before this grant
    from_deferral: bool


@dataclass
class DropRecord:
    task: TaskRequest
    decision: OffloadDecision
    reason: str           # capacity | expired
    charge: float         # payment attributed to the drop for the penalty


@dataclass
class RedistributionRecord:
    """Before/after audit of one surplus top-up."""

    user_id: int
    F_before: float
    F_after: float
    payment_before: float
    payment_after: float
    t_before: float
    t_after: float


@dataclass
class ServerState:
    """Mutable per-run server bookkeeping; owned by a single run."""

    F_total: float
    epsilon: float        # admission cutoff, cycle/s
    gamma: float          # penalty weight, in (0, 1)
    F_t: float = field(init=False)
    class2: deque[QueueEntry] = field(default_factory=deque)

    def __post_init__(self) -> None:
        if self.F_total <= 0:
            raise ValueError("F_total must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.epsilon < 0:
            raise ValueError("epsilon cannot be negative")
        self.F_t = self.F_total


@dataclass
class SlotOutcome:
    """Everything that happened to the server in one slot."""

    slot: int
    served: list[GrantRecord]
    deferred: list[QueueEntry]
    dropped: list[DropRecord]
    redistribution: list[RedistributionRecord]
    penalty: float
    server_utility: float

    @property
    def payments(self) -> float:
        return math.fsum(g.payment for g in self.served)


def penalty(dropped_payments: list[float], gamma: float) -> float:
    """Penalty charged against revenue: gamma times the drops' payments."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return gamma * math.fsum(dropped_payments)


def server_utility(payments: list[float], penalty_value: float) -> float:
    """Revenue minus the drop penalty; may come out negative."""
    utility = math.fsum(payments) - penalty_value
    if utility < 0:
        log.warning("server utility negative: %.6g", utility)
    return utility


def _charge_for_drop(pricer: PricingEngine, task: TaskRequest, dec: OffloadDecision) -> float:
    q = dec.q if dec.q > 0 else task.l
    return pricer.drop_quote(q, task.t_req, dec.t_up, dec.t_down, task.F_loc)


def run_slot(
    state: ServerState,
    arrivals: list[tuple[TaskRequest, OffloadDecision]],
    pricer: PricingEngine,
    slot: int,
) -> SlotOutcome:
    """Run one slot of admission, pricing and settlement.

    ``arrivals`` must hold partial-offload decisions only; local tasks
    never reach the server and drops never ask for capacity. Capacity
    resets to the installed total at slot start. The deferral queue is
    served first (its stale entries are expired and penalized), then the
    arrivals in order. Remaining capacity is always the installed total
    minus the exact sum of grants, so granted plus idle capacity is
    conserved at every step.
    """
    for _, dec in arrivals:
        if dec.kind is not DecisionKind.PARTIAL:
            raise ContractViolation(f"scheduler fed a {dec.kind.value} decision")

    state.F_t = state.F_total
    served: list[GrantRecord] = []
    dropped: list[DropRecord] = []
    deferred: list[QueueEntry] = []

    def grant(entry: QueueEntry, from_deferral: bool) -> None:
        task, dec = entry.task, entry.decision
        quote_ft = state.F_t
        quote = pricer.quote(dec.q, dec.F_req, quote_ft, task.F_loc)
        waited = slot - task.arrival_slot
        # Realized latency swaps the planning wait estimate for the slots
        # actually spent in the deferral queue.
        realized = expected_latency(
            task, dec.q, dec.F_req, pricer.h, dec.t_up, dec.t_down,
            waited * SLOT_SECONDS,
        )
        served.append(
            GrantRecord(
                task=task,
                decision=dec,
                F_i=dec.F_req,
                q=dec.q,
                F_t_quote=quote_ft,
                unit_price=quote.unit_price,
                payment=quote.payment,
                t_fact=quote.processing_time,
                latency=realized,
                waited_slots=waited,
                from_deferral=from_deferral,
            )
        )
        # Exact conservation: idle capacity is a single subtraction.
        state.F_t = state.F_total - math.fsum(g.F_i for g in served)

    # Expire deferred tasks whose waiting already blew the deadline; each
    # is dequeued and penalized exactly once.
    still_waiting: deque[QueueEntry] = deque()
    for entry in state.class2:
        waited_s = (slot - entry.task.arrival_slot) * SLOT_SECONDS
        if waited_s + entry.decision.t_expected > entry.task.t_req + _TOL:
            dropped.append(
                DropRecord(entry.task, entry.decision, "expired",
                           _charge_for_drop(pricer, entry.task, entry.decision))
            )
        else:
            still_waiting.append(entry)
    state.class2 = still_waiting

    # Deferral queue goes first. The drain test is >= while fresh
    # admission below uses strict >, an intentional asymmetry.
    while state.class2 and state.F_t >= state.class2[0].decision.F_req:
        grant(state.class2.popleft(), from_deferral=True)

    for task, dec in arrivals:
        entry = QueueEntry(task, dec)
        admissible = state.F_t > state.epsilon
        if admissible and state.F_t > dec.F_req:
            grant(entry, from_deferral=False)
        elif task.t_req > dec.t_expected + _TOL:
            deferred.append(entry)
            state.class2.append(entry)
        else:
            dropped.append(
                DropRecord(task, dec, "capacity", _charge_for_drop(pricer, task, dec))
            )

    redistribution: list[RedistributionRecord] = []
    if pricer.redistributes and served and state.F_t > 0:
        redistribution = redistribute_surplus(state, served, pricer)

    pen = penalty([d.charge for d in dropped], state.gamma) if dropped else 0.0
    utility = server_utility([g.payment for g in served], pen)
    return SlotOutcome(
        slot=slot,
        served=served,
        deferred=deferred,
        dropped=dropped,
        redistribution=redistribution,
        penalty=pen,
        server_utility=utility,
    )


def redistribute_surplus(
    state: ServerState,
    served: list[GrantRecord],
    pricer: PricingEngine,
) -> list[RedistributionRecord]:
    """Hand the slot's leftover capacity to the granted tasks.

    Shares are proportional to offloaded bits and the last share absorbs
    the rounding residue, so remaining capacity lands on exactly zero.
    Every touched grant is re-timed and re-quoted at its original
    quote-time remaining capacity; with the log price both the charge and
    the speed strictly improve.
    """
    if not served:
        log.info("surplus of %.4g cycle/s persists: nothing granted", state.F_t)
        return []
    surplus = state.F_t
    if surplus <= 0:
        return []
    q_total = math.fsum(g.q for g in served)
    audit: list[RedistributionRecord] = []
    handed = 0.0
    for i, g in enumerate(served):
        share = surplus - handed if i == len(served) - 1 else surplus * (g.q / q_total)
        handed += share
        f_new = g.F_i + share
        quote = pricer.quote(g.q, f_new, g.F_t_quote, g.task.F_loc)
        audit.append(
            RedistributionRecord(
                user_id=g.task.user_id,
                F_before=g.F_i,
                F_after=f_new,
                payment_before=g.payment,
                payment_after=quote.payment,
                t_before=g.t_fact,
                t_after=quote.processing_time,
            )
        )
        g.F_i = f_new
        g.unit_price = quote.unit_price
        g.payment = quote.payment
        g.t_fact = quote.processing_time
        g.latency = expected_latency(
            g.task, g.q, f_new, pricer.h, g.decision.t_up, g.decision.t_down,
            g.waited_slots * SLOT_SECONDS,
        )
    residual = state.F_total - math.fsum(g.F_i for g in served)
    if abs(residual) > 1e-6 * state.F_total:
        log.warning("redistribution left %.4g cycle/s unassigned", residual)
    state.F_t = 0.0
    return audit
