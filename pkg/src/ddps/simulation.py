"""Time-slotted simulation of one edge server and a population of
solar-harvesting devices.

Each slot: arrivals are sampled per device, every task runs through the
offloading decision, offloads go to the server's admission loop, surplus
capacity is redistributed under the log-priced scheme, payments settle,
and batteries charge. A run is a pure function of its scenario (seed
included): repeating it reproduces every metric bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import policy, queueing
from .energy import BatteryState, EnergyParams, total_energy, update_battery
from .policy import DecisionKind, OffloadDecision, TaskRequest
from .pricing import PricingEngine, PricingParams, STRATEGIES, uniform_payment
from .scheduler import ServerState, SlotOutcome, run_slot

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "EnergyDefaults",
    "UserRanges",
    "Scenario",
    "MetricsRecord",
    "RunResult",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "run",
    "sweep",
    "ratio_of_service",
    "SWEEP_AXES",
]

SCHEMA_VERSION = 1
SWEEP_AXES = ("F_total", "lambda")

_TOL = 1e-9


class ConfigError(ValueError):
    """A scenario document is malformed or out of range."""


@dataclass(frozen=True)
class EnergyDefaults:
    """Scenario-wide template for per-device energy parameters.

    The harvest A*H*eta*k_a = 0.4 J/slot puts the offload-eligibility
    threshold inside the 100..500 KB task-size band for mid-to-fast CPUs,
    so the capacity-request distribution spans the whole swept range.
    """

    k: float = 1e-27
    h: float = 500.0
    A: float = 0.01
    H: float = 1000.0
    eta: float = 0.2
    k_a: float = 0.2
    P_u: float = 0.1
    P_d: float = 1.0
    r: float = 0.2
    E_b: float = 5.0
    initial_charge: float = 0.5  # starting battery level, fraction of E_b


@dataclass(frozen=True)
class UserRanges:
    """Distributions the per-device parameters are drawn from."""

    f_loc_choices: tuple[float, ...] = tuple(i * 1e8 for i in range(1, 11))
    l_range: tuple[float, float] = (8e5, 4e6)       # bits (100..500 decimal KB)
    t_req_nominal: float = 0.5
    t_req_jitter: float = 0.2                        # +-20 percent
    tx_delay_range: tuple[float, float] = (0.1, 0.3)  # mean-size upload time band, s


@dataclass(frozen=True)
class Scenario:
    """Everything one run depends on; serializable and hashable by value."""

    name: str = "defaults"
    n_users: int = 20
    lam: float = 0.3            # per-device arrival rate, tasks/slot
    F_total: float = 6e9        # installed server capacity, cycle/s
    slots: int = 60
    pricing: str = "ddps"
    seed: int = 1
    gamma: float = 0.02         # drop-penalty weight
    epsilon: float = 1e7        # admission cutoff
    d: float = 1.0
    a: float = 1.0
    b: float = 0.1
    max_N: int = 4              # concurrency cap used by the service-rate estimate
    rng: str = "philox"
    greed_factor: float = 10.0  # capacity over-request of the flat-rate schemes
    greed_cap: float = 0.9      # ... capped at this fraction of F_total
    energy: EnergyDefaults = field(default_factory=EnergyDefaults)
    users: UserRanges = field(default_factory=UserRanges)

    def __post_init__(self) -> None:
        if self.pricing not in STRATEGIES:
            raise ConfigError(
                f"unknown pricing {self.pricing!r}; valid: {', '.join(STRATEGIES)}"
            )
        if self.rng != "philox":
            raise ConfigError("only the philox counter-based generator is supported")
        if self.n_users < 0 or self.slots < 0:
            raise ConfigError("n_users and slots cannot be negative")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.F_total <= 0:
            raise ConfigError("F_total must be positive")


@dataclass(frozen=True)
class MetricsRecord:
    """Aggregates of one run."""

    avg_latency: float
    server_utility: float
    ros: float
    drop_count: int
    deferred_count: int
    mean_payment: float
    capacity_utilization: float


@dataclass
class RunResult:
    scenario: Scenario
    metrics: MetricsRecord
    n_tasks: int
    n_within_deadline: int
    granted_capacity: float    # cycle/s summed over slots, after top-ups
    idle_capacity: float
    per_slot: list[dict[str, Any]]
    events: list[dict[str, Any]]
    redistribution_audits: list[tuple[int, list[Any]]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# scenario (de)serialization

def _energy_from_dict(d: dict[str, Any]) -> EnergyDefaults:
    try:
        return EnergyDefaults(**d)
    except TypeError as exc:
        raise ConfigError(f"bad energy section: {exc}") from None


def _users_from_dict(d: dict[str, Any]) -> UserRanges:
    try:
        kwargs = dict(d)
        for key in ("f_loc_choices",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        for key in ("l_range", "tx_delay_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return UserRanges(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad users section: {exc}") from None


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    """Build a scenario from a JSON document, validating field by field."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    kwargs: dict[str, Any] = {}
    known = {f.name for f in dataclasses.fields(Scenario)}
    for key, value in doc.items():
        if key in ("schema_version", "sweep"):
            continue
        name = "lam" if key == "lambda" else key
        if name not in known:
            raise ConfigError(f"unknown scenario field {key!r}")
        if name == "energy":
            kwargs[name] = _energy_from_dict(value)
        elif name == "users":
            kwargs[name] = _users_from_dict(value)
        else:
            kwargs[name] = value
    try:
        return Scenario(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    for f in dataclasses.fields(Scenario):
        value = getattr(s, f.name)
        key = "lambda" if f.name == "lam" else f.name
        if dataclasses.is_dataclass(value):
            value = dataclasses.asdict(value)
            for k, v in value.items():
                if isinstance(v, tuple):
                    value[k] = list(v)
        doc[key] = value
    return doc


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# the run itself

@dataclass
class _User:
    index: int
    params: EnergyParams
    battery: BatteryState
    committed: float = 0.0  # energy already pledged this slot


@dataclass
class _TaskRecord:
    task: TaskRequest
    decision: OffloadDecision
    latency: float = 0.0
    within_deadline: bool = False
    payment: float = 0.0
    served: bool = False
    dropped: bool = False
    resolved: bool = False


def _build_users(s: Scenario, rng: np.random.Generator) -> list[_User]:
    e = s.energy
    l_mean = 0.5 * (s.users.l_range[0] + s.users.l_range[1])
    r_lo = l_mean / s.users.tx_delay_range[1]
    r_hi = l_mean / s.users.tx_delay_range[0]
    users = []
    for i in range(s.n_users):
        f_loc = float(rng.choice(np.asarray(s.users.f_loc_choices)))
        params = EnergyParams(
            k=e.k, h=e.h, A=e.A, H=e.H, eta=e.eta, k_a=e.k_a,
            P_u=e.P_u, P_d=e.P_d,
            R_u=float(rng.uniform(r_lo, r_hi)),
            R_d=float(rng.uniform(r_lo, r_hi)),
            r=e.r, E_b=e.E_b, F_loc=f_loc,
        )
        users.append(_User(i, params, BatteryState(E_r=e.initial_charge * e.E_b)))
    return users


def _planning_wait(s: Scenario, rng: np.random.Generator) -> float:
    """Queueing-delay estimate fed into every capacity request."""
    jitter = rng.uniform(-s.users.t_req_jitter, s.users.t_req_jitter, size=s.max_N)
    deadlines = [s.users.t_req_nominal * (1.0 + float(j)) for j in jitter]
    mu = queueing.service_rate(deadlines, s.max_N)
    return queueing.mm1_wait(s.lam, mu)


def _draw_task(s: Scenario, rng: np.random.Generator, user: _User, slot: int) -> TaskRequest:
    l = float(rng.uniform(*s.users.l_range))
    jitter = float(rng.uniform(-s.users.t_req_jitter, s.users.t_req_jitter))
    return TaskRequest(
        user_id=user.index,
        l=l,
        t_req=s.users.t_req_nominal * (1.0 + jitter),
        F_loc=user.params.F_loc,
        arrival_slot=slot,
    )


def _greedy_request(s: Scenario, dec: OffloadDecision, task: TaskRequest, t_w: float) -> OffloadDecision:
    """Capacity over-request of the flat-rate schemes.

    When the unit price does not grow with capacity, taking more is free
    to the buyer and shortens its runtime, so the request inflates to the
    largest admissible share.
    """
    f_new = max(dec.F_req, min(s.greed_factor * dec.F_req, s.greed_cap * s.F_total))
    if f_new == dec.F_req:
        return dec
    return policy.with_capacity(dec, task, f_new, s.energy.h, t_w)


def run(scenario: Scenario, trace: bool = False) -> RunResult:
    """Execute one scenario end to end and aggregate its metrics.

    Deterministic: all randomness flows from the scenario seed through
    one counter-based generator per stream (task attributes, plus one
    arrival stream per device).
    """
    s = scenario
    root = np.random.SeedSequence(s.seed)
    streams = root.spawn(s.n_users + 1)
    rng = queueing.make_rng(streams[0])

    t_w = _planning_wait(s, rng)
    users = _build_users(s, rng)
    arrival_counts = [
        queueing.sample_arrivals(s.lam, streams[i + 1], s.slots) for i in range(s.n_users)
    ]

    pricer = PricingEngine(
        s.pricing, PricingParams(d=s.d, a=s.a, b=s.b), h=s.energy.h, F_total=s.F_total
    )
    server = ServerState(F_total=s.F_total, epsilon=s.epsilon, gamma=s.gamma)

    records: list[_TaskRecord] = []
    pending: dict[int, _TaskRecord] = {}  # id(task) -> record awaiting the server
    events: list[dict[str, Any]] = []
    per_slot: list[dict[str, Any]] = []
    audits: list[tuple[int, list[Any]]] = []
    utilities: list[float] = []
    granted = 0.0
    idle = 0.0
    deferred_count = 0
    greedy = s.pricing in ("uniform", "differentiated")

    def emit(slot: int, user_id: int, event: str, f_i: float, q: float,
             payment: float, reason: str | None) -> None:
        if trace:
            events.append({
                "slot": slot, "user_id": user_id, "event": event,
                "F_i": f_i, "q_i": q, "payment": payment, "reason": reason,
            })

    for slot in range(s.slots):
        offloads: list[tuple[TaskRequest, OffloadDecision]] = []
        slot_records: list[_TaskRecord] = []
        for user in users:
            user.committed = 0.0
            for _ in range(int(arrival_counts[user.index][slot])):
                task = _draw_task(s, rng, user, slot)
                avail = BatteryState(
                    E_r=max(0.0, user.battery.E_r - user.committed), slot=slot
                )
                dec = policy.decide(task, avail, user.params, t_w)
                if dec.kind is DecisionKind.PARTIAL and greedy:
                    dec = _greedy_request(s, dec, task, t_w)
                rec = _TaskRecord(task, dec)
                records.append(rec)
                slot_records.append(rec)
                if dec.kind is DecisionKind.PARTIAL:
                    user.committed += total_energy(user.params, task.l, dec.q)
                    offloads.append((task, dec))
                    pending[id(task)] = rec
                elif dec.kind is DecisionKind.LOCAL_ONLY:
                    user.committed += total_energy(user.params, task.l, 0.0)
                    rec.latency = dec.t_expected
                    rec.within_deadline = dec.t_expected <= task.t_req + _TOL
                    rec.resolved = True
                    emit(slot, task.user_id, "local", 0.0, 0.0, 0.0, None)
                else:
                    rec.latency = task.t_req
                    rec.dropped = True
                    rec.resolved = True
                    emit(slot, task.user_id, "drop", 0.0, dec.q, 0.0,
                         dec.drop_reason.value)

        mu_star: float | None = None
        if s.pricing == "uniform" and offloads:
            candidates = [(s.energy.h, d.q, t.F_loc) for t, d in offloads]
            mu_star, _ = uniform_payment(candidates, s.F_total)
            if mu_star is not None:
                kept: list[tuple[TaskRequest, OffloadDecision]] = []
                for task, dec in offloads:
                    if 1.0 / task.F_loc < mu_star:
                        # Rejects the broadcast rate; reverts to local execution.
                        user = users[task.user_id]
                        user.committed -= total_energy(user.params, task.l, dec.q)
                        avail = BatteryState(
                            E_r=max(0.0, user.battery.E_r - user.committed), slot=slot
                        )
                        local = policy.force_local(task, avail, user.params)
                        rec = pending.pop(id(task))
                        rec.decision = local
                        if local.kind is DecisionKind.LOCAL_ONLY:
                            user.committed += total_energy(user.params, task.l, 0.0)
                            rec.latency = local.t_expected
                            rec.within_deadline = local.t_expected <= task.t_req + _TOL
                        else:
                            rec.latency = task.t_req
                            rec.dropped = True
                        rec.resolved = True
                        emit(slot, task.user_id, "price_reject", 0.0, 0.0, 0.0, None)
                    else:
                        kept.append((task, dec))
                offloads = kept
        pricer.begin_slot(mu_star)

        outcome = run_slot(server, offloads, pricer, slot)
        deferred_count += len(outcome.deferred)
        for g in outcome.served:
            rec = pending.pop(id(g.task))
            rec.latency = g.latency
            rec.within_deadline = rec.latency <= g.task.t_req + _TOL
            rec.payment = g.payment
            rec.served = True
            rec.resolved = True
            emit(slot, g.task.user_id, "grant", g.F_i, g.q, g.payment, None)
        for d in outcome.dropped:
            rec = pending.pop(id(d.task))
            rec.latency = d.task.t_req
            rec.dropped = True
            rec.resolved = True
            emit(slot, d.task.user_id, "drop", d.decision.F_req, d.decision.q,
                 d.charge, d.reason)
        for entry in outcome.deferred:
            emit(slot, entry.task.user_id, "defer", entry.decision.F_req,
                 entry.decision.q, 0.0, None)
        if outcome.redistribution:
            audits.append((slot, outcome.redistribution))
        for r in outcome.redistribution:
            emit(slot, r.user_id, "redistribute", r.F_after, 0.0, r.payment_after, None)

        for user in users:
            user.battery = update_battery(user.battery, user.params, user.committed)

        slot_granted = math.fsum(g.F_i for g in outcome.served)
        granted += slot_granted
        idle += server.F_t
        utilities.append(outcome.server_utility)
        per_slot.append({
            "slot": slot,
            "arrivals": len(slot_records),
            "served": len(outcome.served),
            "deferred": len(outcome.deferred),
            "dropped": len(outcome.dropped),
            "granted_F": slot_granted,
            "idle_F": server.F_t,
            "payments": outcome.payments,
            "penalty": outcome.penalty,
            "utility": outcome.server_utility,
        })

    # Tasks still parked in the deferral queue at the horizon never ran;
    # they count as drops but are not penalized (censoring artifact).
    for entry in server.class2:
        rec = pending.pop(id(entry.task))
        rec.latency = entry.task.t_req
        rec.dropped = True
        rec.resolved = True
    assert not pending

    n_tasks = len(records)
    n_within = sum(1 for r in records if r.within_deadline)
    payments = [r.payment for r in records if r.served]
    drop_count = sum(1 for r in records if r.dropped)
    metrics = MetricsRecord(
        avg_latency=(math.fsum(r.latency for r in records) / n_tasks) if n_tasks else 0.0,
        server_utility=math.fsum(utilities),
        ros=(n_within / n_tasks) if n_tasks else 0.0,
        drop_count=drop_count,
        deferred_count=deferred_count,
        mean_payment=(math.fsum(payments) / len(payments)) if payments else 0.0,
        capacity_utilization=granted / (s.F_total * s.slots) if s.slots else 0.0,
    )
    return RunResult(
        scenario=s,
        metrics=metrics,
        n_tasks=n_tasks,
        n_within_deadline=n_within,
        granted_capacity=granted,
        idle_capacity=idle,
        per_slot=per_slot,
        events=events,
        redistribution_audits=audits,
    )


def ratio_of_service(result: RunResult) -> float:
    """Fraction of all generated tasks that finished within their deadline."""
    if result.n_tasks == 0:
        return 0.0
    return result.n_within_deadline / result.n_tasks


def sweep(
    base: Scenario,
    axis: str,
    values: list[float],
    strategies: list[str],
    seeds: list[int] | None = None,
) -> list[dict[str, Any]]:
    """Cross product of axis values, strategies and seeds, one row per run.

    Without an explicit seed list each axis value gets the derived seed
    ``base.seed XOR value_index``, shared by all strategies so pricing
    schemes face identical workloads. Rows come out value-major,
    strategy-minor, seed-innermost, and the ordering is stable.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: {', '.join(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    for st in strategies:
        if st not in STRATEGIES:
            raise ConfigError(f"unknown strategy {st!r}; valid: {', '.join(STRATEGIES)}")
    rows: list[dict[str, Any]] = []
    for vi, value in enumerate(values):
        run_seeds = seeds if seeds else [base.seed ^ vi]
        for strategy in strategies:
            for seed in run_seeds:
                overrides: dict[str, Any] = {"pricing": strategy, "seed": seed}
                if axis == "F_total":
                    overrides["F_total"] = value
                else:
                    overrides["lam"] = value
                scenario = dataclasses.replace(base, **overrides)
                result = run(scenario)
                rows.append(result_row(result, axis=axis, value=value))
    return rows


#: Column order of every metrics table; append-only, see SCHEMA_VERSION.
METRICS_COLUMNS = (
    "name", "axis", "value", "strategy", "seed", "n_users", "lambda", "F_total",
    "slots", "avg_latency", "server_utility", "ros", "drop_count",
    "deferred_count", "mean_payment", "capacity_utilization",
)


def result_row(result: RunResult, axis: str = "", value: float | str = "") -> dict[str, Any]:
    s, m = result.scenario, result.metrics
    return {
        "name": s.name,
        "axis": axis,
        "value": value,
        "strategy": s.pricing,
        "seed": s.seed,
        "n_users": s.n_users,
        "lambda": s.lam,
        "F_total": s.F_total,
        "slots": s.slots,
        "avg_latency": m.avg_latency,
        "server_utility": m.server_utility,
        "ros": m.ros,
        "drop_count": m.drop_count,
        "deferred_count": m.deferred_count,
        "mean_payment": m.mean_payment,
        "capacity_utilization": m.capacity_utilization,
    }
