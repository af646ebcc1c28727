"""Per-task offloading decision of one device.

Each task is sized against the device's three energy thresholds and comes
out as one of: run everything locally, offload part of the data with a
deadline-derived server capacity, or drop. Offload volume is chosen
smallest-first: the sustainability floor l - l_c when stored charge covers
its transmission draw, otherwise the harvest-neutral balance point. The
requested capacity is the minimum that finishes exactly at the deadline.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .energy import (
    BatteryState,
    EnergyParams,
    balanced_offload,
    critical_data,
    harvest_energy,
    max_offload,
    total_energy,
    transmission_times,
)

__all__ = [
    "DecisionKind",
    "DropReason",
    "TaskRequest",
    "OffloadDecision",
    "DeadlineInfeasibleError",
    "required_capacity",
    "expected_latency",
    "decide",
    "force_local",
    "with_capacity",
]

# Slack below one nanosecond is treated as no slack at all.
_TOL = 1e-9


class DecisionKind(enum.Enum):
    LOCAL_ONLY = "local_only"
    PARTIAL = "partial"
    DROP = "drop"


class DropReason(enum.Enum):
    OVERSIZE = "oversize"                      # task exceeds the transmit-energy cap
    ENERGY_INFEASIBLE = "energy_infeasible"    # harvest plus storage cannot fund any plan
    DEADLINE_INFEASIBLE = "deadline_infeasible"  # no finite capacity meets the deadline


class DeadlineInfeasibleError(ValueError):
    """The deadline leaves no processing time at any finite capacity."""


@dataclass(frozen=True)
class TaskRequest:
    """One task generated by one device in one slot."""

    user_id: int
    l: float            # data size, bits
    t_req: float        # completion deadline, s
    F_loc: float        # the device's own CPU, cycle/s
    arrival_slot: int

    def __post_init__(self) -> None:
        if self.l <= 0 or self.t_req <= 0 or self.F_loc <= 0:
            raise ValueError("l, t_req and F_loc must be strictly positive")


@dataclass(frozen=True)
class OffloadDecision:
    """Outcome of the decision: what runs where, and the expected latency."""

    kind: DecisionKind
    q: float = 0.0            # offloaded bits; 0 unless PARTIAL
    F_req: float = 0.0        # requested server capacity, cycle/s
    t_expected: float = 0.0   # planned completion time, s
    t_up: float = 0.0         # uplink time of q at the device's rate
    t_down: float = 0.0
    drop_reason: DropReason | None = None
    branch: str = ""          # local | minimal | balanced (decision mode tag)

    def __post_init__(self) -> None:
        if self.kind is DecisionKind.PARTIAL and (self.q <= 0 or self.F_req <= 0):
            raise ValueError("partial offload needs positive q and F_req")
        if self.kind is DecisionKind.LOCAL_ONLY and self.q != 0:
            raise ValueError("local execution cannot carry offloaded bits")
        if self.kind is DecisionKind.DROP and self.drop_reason is None:
            raise ValueError("drop decisions carry a reason")


def required_capacity(q: float, t_req: float, t_w: float, p: EnergyParams) -> float:
    """Smallest server capacity that completes q bits exactly at the deadline.

    Inverts the offload latency (wait + uplink + processing + downlink)
    for the processing term. Raises DeadlineInfeasibleError when waiting
    and transfer already exceed the deadline.
    """
    if q <= 0:
        raise ValueError("q must be positive")
    t_up, t_down = transmission_times(p, q)
    slack = t_req - t_w - t_up - t_down
    if slack <= _TOL:
        raise DeadlineInfeasibleError(
            f"deadline {t_req:.4g}s leaves no processing slack "
            f"(wait {t_w:.4g}s, transfer {t_up + t_down:.4g}s)"
        )
    return p.h * q / slack


def expected_latency(
    task: TaskRequest, q: float, F_i: float, h: float, t_up: float, t_down: float, t_w: float
) -> float:
    """Completion time of a split plan: the slower of local and offload paths."""
    t_local = (task.l - q) * h / task.F_loc
    t_off = t_up + h * q / F_i + t_down + t_w
    return max(t_local, t_off)


def _drop(reason: DropReason) -> OffloadDecision:
    return OffloadDecision(kind=DecisionKind.DROP, drop_reason=reason)


def decide(
    task: TaskRequest, b: BatteryState, p: EnergyParams, t_w: float
) -> OffloadDecision:
    """Choose local execution, partial offload, or drop for one task.

    Pure function of its inputs; the caller charges the battery afterwards.
    ``t_w`` is the queueing-delay planning estimate. The branch order:

    * l <= l_c: local execution fits in one harvest, offload nothing.
    * l > l_m: even pure transmission overruns the harvest, drop.
    * otherwise offload q bits, smallest first: the floor l - l_c when the
      battery can fund its transmission (storage is there to be spent),
      else the harvest-neutral balance point. The offload volume is then
      raised, if needed, until the local remainder fits the deadline, and
      the whole plan is re-checked against harvest plus storage.
    """
    if task.F_loc != p.F_loc:
        raise ValueError("task and energy parameters disagree on F_loc")
    l, t_req = task.l, task.t_req
    l_c = critical_data(p)
    if l <= l_c:
        t_loc = l * p.h / p.F_loc
        return OffloadDecision(
            kind=DecisionKind.LOCAL_ONLY, t_expected=t_loc, branch="local"
        )
    if l > max_offload(p):
        return _drop(DropReason.OVERSIZE)
    if p.local_slope <= p.offload_slope:
        # Offloading costs more per bit than local work saves, and the task
        # is too large to run locally on harvest alone.
        return _drop(DropReason.ENERGY_INFEASIBLE)

    q_floor = l - l_c
    if b.E_r >= p.offload_slope * q_floor:
        q, branch = q_floor, "minimal"
    else:
        q_bal = balanced_offload(p, l)
        if q_bal is None or q_bal <= 0:
            return _drop(DropReason.ENERGY_INFEASIBLE)
        q, branch = q_bal, "balanced"

    # The local remainder must itself fit the deadline; offloading more
    # only saves energy here (local slope exceeds offload slope).
    q_deadline = l - t_req * p.F_loc / p.h
    if q < q_deadline:
        q = q_deadline
        if q > max_offload(p):
            return _drop(DropReason.DEADLINE_INFEASIBLE)

    if total_energy(p, l, q) - harvest_energy(p) > b.E_r + _TOL:
        return _drop(DropReason.ENERGY_INFEASIBLE)

    try:
        f_req = required_capacity(q, t_req, t_w, p)
    except DeadlineInfeasibleError:
        return _drop(DropReason.DEADLINE_INFEASIBLE)
    t_up, t_down = transmission_times(p, q)
    t_exp = expected_latency(task, q, f_req, p.h, t_up, t_down, t_w)
    return OffloadDecision(
        kind=DecisionKind.PARTIAL,
        q=q,
        F_req=f_req,
        t_expected=t_exp,
        t_up=t_up,
        t_down=t_down,
        branch=branch,
    )


def force_local(task: TaskRequest, b: BatteryState, p: EnergyParams) -> OffloadDecision:
    """Demote a task to fully local execution, e.g. when it rejects a price.

    Falls back to an energy-infeasible drop when harvest plus storage
    cannot fund running the whole task locally.
    """
    if p.local_slope * task.l - harvest_energy(p) > b.E_r + _TOL:
        return _drop(DropReason.ENERGY_INFEASIBLE)
    t_loc = task.l * p.h / p.F_loc
    return OffloadDecision(kind=DecisionKind.LOCAL_ONLY, t_expected=t_loc, branch="local")


def with_capacity(
    decision: OffloadDecision, task: TaskRequest, F_new: float, h: float, t_w: float
) -> OffloadDecision:
    """Same plan at a different server capacity, latency recomputed."""
    if decision.kind is not DecisionKind.PARTIAL:
        raise ValueError("only partial offloads carry a capacity request")
    t_exp = expected_latency(
        task, decision.q, F_new, h, decision.t_up, decision.t_down, t_w
    )
    return replace(decision, F_req=F_new, t_expected=t_exp)
