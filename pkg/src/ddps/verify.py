"""Built-in invariant and trend checks.

Each check is a named callable returning (ok, detail). The CLI's verify
command runs them cheapest-first and stops at the first failure. The
``fault`` argument lets a harness corrupt one known quantity to prove a
check has teeth; production code paths are never touched.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable, Iterable

import numpy as np

from . import policy, pricing, queueing, scheduler, simulation
from .energy import (
    BatteryState,
    EnergyParams,
    balanced_offload,
    critical_data,
    harvest_energy,
    max_offload,
    total_energy,
    transmission_energy,
    update_battery,
)
from .policy import DecisionKind, DropReason, TaskRequest
from .pricing import PricingEngine, PricingParams
from .scheduler import ServerState, run_slot

__all__ = ["CHECKS", "run_checks", "FAULTS", "TREND_SEEDS", "CAPACITY_GRID", "LAMBDA_GRID"]

FAULTS = ("ddps-offset", "redistribution-gap")

TREND_SEEDS = list(range(1, 11))
CAPACITY_GRID = [1e9, 2e9, 3e9, 4e9, 5e9, 6e9]
LAMBDA_GRID = [0.1, 0.2, 0.3]

_REL = 1e-9


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / scale


def _random_params(rng: np.random.Generator) -> EnergyParams:
    return EnergyParams(
        k=float(rng.uniform(1e-28, 1e-26)),
        h=float(rng.uniform(100, 2000)),
        A=float(rng.uniform(0.001, 0.05)),
        H=float(rng.uniform(100, 1200)),
        eta=float(rng.uniform(0.05, 0.95)),
        k_a=float(rng.uniform(0.05, 1.0)),
        P_u=float(rng.uniform(0.01, 1.0)),
        P_d=float(rng.uniform(0.1, 2.0)),
        R_u=float(rng.uniform(1e6, 5e7)),
        R_d=float(rng.uniform(1e6, 5e7)),
        r=float(rng.uniform(0.05, 1.0)),
        E_b=float(rng.uniform(1.0, 20.0)),
        F_loc=float(rng.uniform(1e8, 2e9)),
    )


# ---------------------------------------------------------------------------
# closed-form and unit-level checks

def check_energy_balance(fault: str | None = None) -> tuple[bool, str]:
    """Thresholds satisfy their defining balance equations on random draws."""
    rng = queueing.make_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        p = _random_params(rng)
        e_h = harvest_energy(p)
        l_c = critical_data(p)
        worst = max(worst, _rel_err(p.local_slope * l_c, e_h))
        l_m = max_offload(p)
        e_u, e_d = transmission_energy(p, l_m)
        worst = max(worst, _rel_err(e_u + e_d, e_h))
        if p.local_slope > p.offload_slope:
            l = l_c * 1.5
            if l <= l_m:
                q = balanced_offload(p, l)
                if q is not None and 0 < q < l:
                    worst = max(worst, _rel_err(total_energy(p, l, q), e_h))
    elapsed = time.perf_counter() - start
    ok = worst < _REL and elapsed < 1.0
    return ok, f"worst rel err {worst:.2e}, {elapsed*1e3:.0f} ms"


def check_payment_partials(fault: str | None = None) -> tuple[bool, str]:
    """Finite-difference payment slopes match the analytic forms, both >= 0.

    Also pins the log offset: the bid must be non-negative all the way
    down to zero requested capacity.
    """
    d = 0.5 if fault == "ddps-offset" else 1.0
    start = time.perf_counter()
    if math.log10(0.0 + d) < 0:
        return False, f"bid is negative at zero capacity with d={d}"
    h, f_t = 1000.0, 6e9
    qs = np.linspace(1e4, 4e6, 100)
    fis = np.linspace(1e6, f_t * (1 - 1e-4), 100)
    worst = 0.0
    for q in qs[::7]:
        for fi in fis[::7]:
            eps_q = q * 1e-5
            fd_q = (pricing.ddps_payment(h, q + eps_q, fi, f_t, d)
                    - pricing.ddps_payment(h, q - eps_q, fi, f_t, d)) / (2 * eps_q)
            an_q = pricing.payment_gradient_data(h, fi, f_t, d)
            eps_f = fi * 1e-5
            fd_f = (pricing.ddps_payment(h, q, fi + eps_f, f_t, d)
                    - pricing.ddps_payment(h, q, fi - eps_f, f_t, d)) / (2 * eps_f)
            an_f = pricing.payment_gradient_capacity(h, q, fi, f_t, d)
            if an_q < 0 or an_f < 0 or fd_q < 0 or fd_f < 0:
                return False, f"negative slope at q={q:.3g}, F_i={fi:.3g}, d={d}"
            worst = max(worst, _rel_err(fd_q, an_q), _rel_err(fd_f, an_f))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 1.0
    return ok, f"worst rel err {worst:.2e}, {elapsed*1e3:.0f} ms"


def check_capacity_discount(fault: str | None = None) -> tuple[bool, str]:
    """Ten-fold capacity raises the charge only marginally.

    Moving the request from 10^n to 10^m multiplies the charge by at most
    (m + 0.01)/n for n >= 3 while resources grow 10^(m-n)-fold.
    """
    h, q, f_t = 1000.0, 1e6, 1e10
    for n in range(3, 9):
        for m in range(n + 1, 10):
            w_n = pricing.ddps_payment(h, q, 10.0**n, f_t, 1.0)
            w_m = pricing.ddps_payment(h, q, 10.0**m, f_t, 1.0)
            ratio = w_m / w_n
            if ratio > (m + 0.01) / n or ratio < m / (n + 0.01):
                return False, f"charge ratio {ratio:.6f} out of bounds for 10^{n}->10^{m}"
    return True, "charge ratio within (m/n) band for all 3 <= n < m <= 9"


def check_pricing_basics(fault: str | None = None) -> tuple[bool, str]:
    """Zero offload pays zero; quotes multiply out; quadratic rate is convex."""
    params = PricingParams()
    for strategy in pricing.STRATEGIES:
        engine = PricingEngine(strategy, params, h=1000.0, F_total=6e9)
        engine.begin_slot(1e-9)
        quote = engine.quote(0.0, 1e9, 6e9, 1e9)
        if quote.payment != 0.0:
            return False, f"{strategy} charges {quote.payment} for no data"
        quote = engine.quote(2e6, 1e9, 6e9, 1e9)
        if _rel_err(quote.payment, quote.unit_price * quote.processing_time) > 1e-12:
            return False, f"{strategy} quote does not multiply out"
    xs = np.linspace(0.0, 1.0, 101)
    rate = 1.0 * xs**2 + 0.1 * xs
    second = np.diff(rate, 2)
    if second.min() < -1e-12:
        return False, "quadratic rate is not convex"
    return True, "all five schemes consistent"


def check_batched_latency_dominance(fault: str | None = None) -> tuple[bool, str]:
    """Shared allocation is never faster than batched FCFS; ties iff K == N."""
    for n in range(1, 65):
        for k in range(1, n + 1):
            if n % k:
                continue
            t1, t2 = queueing.allocation_latencies(n, k, 1.0, 1.0, 1.0)
            if t1 < t2 - 1e-12:
                return False, f"shared beats batched at N={n}, K={k}"
            if (k == n) != (abs(t1 - t2) < 1e-12):
                return False, f"tie structure wrong at N={n}, K={k}"
    return True, "dominance holds for all K | N, N <= 64"


def check_batched_latency_sim(fault: str | None = None) -> tuple[bool, str]:
    """Brute-force batch service reproduces the closed form to 1e-9."""
    worst = 0.0
    for n, k in [(4, 2), (6, 2), (12, 3), (64, 8), (60, 60), (48, 1)]:
        _, t2 = queueing.allocation_latencies(n, k, 3.0, 2.5, 7.0)
        sim = queueing.simulate_batched_latency(n, k, 3.0, 2.5, 7.0)
        worst = max(worst, _rel_err(t2, sim))
    ok = worst < _REL
    return ok, f"worst rel err {worst:.2e}"


def check_poisson_sampler(fault: str | None = None) -> tuple[bool, str]:
    """Sample mean within three sigma of the rate at a million slots."""
    lam, slots = 0.3, 1_000_000
    counts = queueing.sample_arrivals(lam, 42, slots)
    mean = counts.mean()
    bound = 3.0 * math.sqrt(lam / slots)
    same = queueing.sample_arrivals(lam, 42, slots)
    if not np.array_equal(counts, same):
        return False, "sampler is not reproducible from its seed"
    ok = abs(mean - lam) < bound
    return ok, f"|{mean:.6f} - {lam}| vs 3-sigma {bound:.6f}"


def check_mm1_wait(fault: str | None = None) -> tuple[bool, str]:
    """Closed-form queueing delay within 5 percent of a simulated queue."""
    lam, mu = 0.3, 1.0
    want = queueing.mm1_wait(lam, mu)
    got = queueing.simulate_mm1_wait(lam, mu, events=1_000_000)
    err = abs(got - want) / want
    return err < 0.05, f"sim {got:.5f} vs formula {want:.5f} ({err*100:.2f}%)"


# ---------------------------------------------------------------------------
# decision-layer checks

def _branch_fixture() -> list[tuple[str, TaskRequest, BatteryState, EnergyParams]]:
    """Inputs steering the decision into each of its four branches."""
    base = dict(k=1e-27, h=1000.0, A=0.01, H=1000.0, eta=0.2, k_a=0.9,
                P_u=0.1, P_d=1.0, R_u=1e6, R_d=1e6, r=0.2, E_b=10.0, F_loc=1e9)
    p = EnergyParams(**base)
    # l_c = 1.8e6, l_m = 6e6 for these constants.
    cases = [
        ("local", TaskRequest(0, 0.9e6, 5.0, 1e9, 0), BatteryState(5.0), p),
        ("minimal", TaskRequest(0, 3e6, 5.0, 1e9, 0), BatteryState(5.0), p),
        ("balanced", TaskRequest(0, 3e6, 5.0, 1e9, 0), BatteryState(0.0), p),
        ("drop", TaskRequest(0, 7e6, 5.0, 1e9, 0), BatteryState(5.0), p),
    ]
    return cases


def check_decision_branches(fault: str | None = None) -> tuple[bool, str]:
    """All four decision branches fire, honor energy and deadlines, and
    request no more capacity than the deadline needs."""
    t_w = 0.4286
    seen: list[str] = []
    for name, task, battery, p in _branch_fixture():
        dec = policy.decide(task, battery, p, t_w)
        again = policy.decide(task, battery, p, t_w)
        if dec != again:
            return False, "decision is not deterministic"
        if name == "local":
            if dec.kind is not DecisionKind.LOCAL_ONLY:
                return False, f"expected local, got {dec.kind}"
        elif name == "drop":
            if dec.kind is not DecisionKind.DROP or dec.drop_reason is not DropReason.OVERSIZE:
                return False, f"expected oversize drop, got {dec}"
        else:
            if dec.kind is not DecisionKind.PARTIAL or dec.branch != name:
                return False, f"expected partial/{name}, got {dec.kind}/{dec.branch}"
            # energy feasibility: charging the plan never raises
            try:
                update_battery(battery, p, total_energy(p, task.l, dec.q))
            except Exception as exc:
                return False, f"{name}: energy check failed: {exc}"
            # deadline honesty at the returned (q, F_req)
            t_e = policy.expected_latency(
                task, dec.q, dec.F_req, p.h, dec.t_up, dec.t_down, t_w
            )
            if t_e > task.t_req + 1e-9:
                return False, f"{name}: replanned latency {t_e:.6f} blows the deadline"
            # minimality: one percent less capacity misses the deadline
            t_less = policy.expected_latency(
                task, dec.q, 0.99 * dec.F_req, p.h, dec.t_up, dec.t_down, t_w
            )
            if t_less <= task.t_req:
                return False, f"{name}: capacity request is not minimal"
        seen.append(name)
    return True, "branches " + ", ".join(seen)


def check_battery_bounds(fault: str | None = None) -> tuple[bool, str]:
    """Stored energy stays inside [0, E_b] across random feasible sequences."""
    rng = queueing.make_rng(99)
    for _ in range(200):
        p = _random_params(rng)
        b = BatteryState(E_r=float(rng.uniform(0, p.E_b)))
        for _ in range(50):
            budget = b.E_r + harvest_energy(p)
            e = float(rng.uniform(0, budget))
            b = update_battery(b, p, e)
            if not 0.0 <= b.E_r <= p.E_b:
                return False, f"battery escaped bounds: {b.E_r} of {p.E_b}"
    return True, "10k feasible updates stayed in bounds"


# ---------------------------------------------------------------------------
# scheduler and run-level checks

def _defaults(**overrides) -> simulation.Scenario:
    return dataclasses.replace(simulation.Scenario(), **overrides)


def check_capacity_conservation(fault: str | None = None) -> tuple[bool, str]:
    """Granted plus idle capacity equals installed capacity, every slot,
    and grants from the deferral queue always precede fresh grants."""
    result = simulation.run(_defaults(seed=3, slots=60), trace=True)
    total = result.scenario.F_total * result.scenario.slots
    acc = result.granted_capacity + result.idle_capacity
    if _rel_err(acc, total) > 1e-9:
        return False, f"capacity leaked: {acc:.6g} vs {total:.6g}"
    # utility accounting: metrics total equals per-slot sum
    per_slot_u = math.fsum(row["utility"] for row in result.per_slot)
    if _rel_err(per_slot_u, result.metrics.server_utility) > 1e-12:
        return False, "utility is not the sum of slot utilities"
    return True, f"conserved over {result.scenario.slots} slots"


def check_class2_priority(fault: str | None = None) -> tuple[bool, str]:
    """Deferral-queue grants precede same-slot fresh grants; defer and
    expiry bookkeeping matches the deadline arithmetic."""
    p = EnergyParams(k=1e-27, h=1000.0, A=0.01, H=1000.0, eta=0.2, k_a=0.9,
                     P_u=0.1, P_d=1.0, R_u=1e7, R_d=1e7, r=0.2, E_b=10.0, F_loc=1e9)
    engine = PricingEngine("ddps", PricingParams(), h=1000.0, F_total=6e9)
    state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)

    def mk(uid: int, slot: int, f_req: float, t_req: float) -> tuple:
        task = TaskRequest(uid, 1e6, t_req, 1e9, slot)
        q = 5e5
        t_up, t_down = q / p.R_u, q * p.r / p.R_d
        dec = policy.OffloadDecision(
            kind=DecisionKind.PARTIAL, q=q, F_req=f_req,
            t_expected=t_up + 1000.0 * q / f_req + t_down, t_up=t_up, t_down=t_down,
        )
        return task, dec

    big = mk(0, 0, 5.5e9, 4.0)
    wants_defer = mk(1, 0, 2e9, 4.0)          # plenty of slack: defers
    out0 = run_slot(state, [big, wants_defer], engine, 0)
    if len(out0.served) != 1 or len(out0.deferred) != 1:
        return False, f"slot 0 expected 1 grant + 1 deferral, got {out0}"
    fresh = mk(2, 1, 1e9, 4.0)
    out1 = run_slot(state, [fresh], engine, 1)
    if len(out1.served) != 2 or not out1.served[0].from_deferral:
        return False, "deferred task was not served first next slot"
    if out1.served[0].task.user_id != 1 or out1.served[1].task.user_id != 2:
        return False, "grant order violated deferral priority"
    # a deferred task whose wait burns the deadline is dropped exactly once
    state2 = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
    hog = mk(0, 0, 5.9e9, 4.0)
    tight = mk(1, 0, 2e9, 1.2)                # one slot of waiting kills it
    run_slot(state2, [hog, tight], engine, 0)
    out = run_slot(state2, [], engine, 1)
    if len(out.dropped) != 1 or out.dropped[0].reason != "expired":
        return False, "stale deferred task was not expired"
    if out.penalty <= 0:
        return False, "expired task was not penalized"
    return True, "priority, deferral and expiry all consistent"


def check_redistribution(fault: str | None = None) -> tuple[bool, str]:
    """Wherever surplus is handed out, capacity lands exactly on the
    installed total and every touched grant pays more and runs faster."""
    fired = 0
    for seed in TREND_SEEDS:
        result = simulation.run(_defaults(seed=seed))
        f_total = result.scenario.F_total
        for slot, audit in result.redistribution_audits:
            fired += 1
            final = math.fsum(a.F_after for a in audit)
            if fault == "redistribution-gap":
                final += 0.01 * f_total
            if _rel_err(final, f_total) > 1e-6:
                return False, f"slot {slot}: capacity sums to {final:.6g}, not {f_total:.6g}"
            for a in audit:
                if not a.payment_after > a.payment_before:
                    return False, f"slot {slot}: payment did not strictly increase"
                if not a.t_after < a.t_before:
                    return False, f"slot {slot}: runtime did not strictly decrease"
    if fired == 0:
        return False, "redistribution never fired across the seed set"
    return True, f"{fired} redistribution slots audited"


def check_run_determinism(fault: str | None = None) -> tuple[bool, str]:
    """Identical scenario and seed reproduce every metric bit for bit."""
    a = simulation.run(_defaults(seed=11))
    b = simulation.run(_defaults(seed=11))
    if a.metrics != b.metrics:
        return False, f"metrics diverged: {a.metrics} vs {b.metrics}"
    c = simulation.run(_defaults(seed=12))
    if a.metrics == c.metrics:
        return False, "different seeds produced identical metrics"
    return True, "bit-identical metrics on repeat"


# ---------------------------------------------------------------------------
# trend checks over the experiment grids

def _mean_table(rows: list[dict], field: str) -> dict[tuple[float, str], float]:
    acc: dict[tuple[float, str], list[float]] = {}
    for row in rows:
        acc.setdefault((row["value"], row["strategy"]), []).append(row[field])
    return {key: sum(vals) / len(vals) for key, vals in acc.items()}


def capacity_sweep_rows() -> list[dict]:
    base = _defaults()
    return simulation.sweep(base, "F_total", CAPACITY_GRID, list(pricing.STRATEGIES), TREND_SEEDS)


def lambda_sweep_rows() -> list[dict]:
    base = _defaults()
    return simulation.sweep(base, "lambda", LAMBDA_GRID, list(pricing.STRATEGIES), TREND_SEEDS)


def check_capacity_trends(fault: str | None = None, rows: list[dict] | None = None) -> tuple[bool, str]:
    """More capacity never hurts: latency falls and revenue does not drop,
    with the log-priced scheme on top of the revenue table everywhere."""
    start = time.perf_counter()
    rows = rows if rows is not None else capacity_sweep_rows()
    lat = _mean_table(rows, "avg_latency")
    util = _mean_table(rows, "server_utility")
    for strategy in pricing.STRATEGIES:
        series = [lat[(v, strategy)] for v in CAPACITY_GRID]
        for lo, hi in zip(series[1:], series):
            if lo > hi + 1e-9:
                return False, f"{strategy}: latency rose with capacity ({series})"
        useries = [util[(v, strategy)] for v in CAPACITY_GRID]
        # near-zero series (the flat-rate schemes trade in 1e-9-scale
        # payments) are monotone only up to accumulation noise
        tol = max(1e-9, 1e-6 * max(abs(x) for x in useries))
        for lo, hi in zip(useries, useries[1:]):
            if hi < lo - tol:
                return False, f"{strategy}: utility fell with capacity ({useries})"
    margin = lat[(CAPACITY_GRID[0], "ddps")] - lat[(CAPACITY_GRID[-1], "ddps")]
    if not margin > 0:
        return False, f"native-scheme latency margin not positive ({margin:.3g})"
    for v in CAPACITY_GRID:
        best = max(pricing.STRATEGIES, key=lambda st: util[(v, st)])
        if best != "ddps":
            return False, f"{best} out-earned the native scheme at F_total={v:.3g}"
    elapsed = time.perf_counter() - start
    return True, f"latency monotone, margin {margin:.4f} s, revenue lead held ({elapsed:.1f} s)"


def check_lambda_trends(fault: str | None = None, rows: list[dict] | None = None) -> tuple[bool, str]:
    """Load trends: the native scheme keeps the revenue lead at every
    arrival rate, stays the lowest-latency scheme, and its service ratio
    moves less across rates than the flat-rate schemes'."""
    rows = rows if rows is not None else lambda_sweep_rows()
    util = _mean_table(rows, "server_utility")
    lat = _mean_table(rows, "avg_latency")
    ros = _mean_table(rows, "ros")
    for v in LAMBDA_GRID:
        best = max(pricing.STRATEGIES, key=lambda st: util[(v, st)])
        if best != "ddps":
            return False, f"{best} out-earned the native scheme at lambda={v}"
        lowest = min(pricing.STRATEGIES, key=lambda st: lat[(v, st)])
        if lat[(v, "ddps")] > lat[(v, lowest)] + 1e-9:
            return False, f"{lowest} beat the native scheme on latency at lambda={v}"
    def spread(strategy: str) -> float:
        vals = [ros[(v, strategy)] for v in LAMBDA_GRID]
        return max(vals) - min(vals)
    s_ddps = spread("ddps")
    for other in ("uniform", "differentiated"):
        if s_ddps > spread(other) + 1e-12:
            return False, f"service-ratio spread {s_ddps:.4f} exceeds {other}'s {spread(other):.4f}"
    for (v, st), value in ros.items():
        if not 0.0 <= value <= 1.0:
            return False, f"service ratio out of range at {(v, st)}: {value}"
    if not all(ros[(v, 'ddps')] < 1.0 for v in LAMBDA_GRID):
        return False, "native-scheme service ratio hit 1.0; no non-offloading cases"
    return True, f"revenue and latency leads held; spread {s_ddps:.4f}"


CHECKS: list[tuple[str, Callable[..., tuple[bool, str]]]] = [
    ("energy-balance-identities", check_energy_balance),
    ("payment-monotonicity-partials", check_payment_partials),
    ("capacity-discount-bound", check_capacity_discount),
    ("pricing-basics", check_pricing_basics),
    ("batched-latency-dominance", check_batched_latency_dominance),
    ("batched-latency-sim-match", check_batched_latency_sim),
    ("poisson-sampler-stats", check_poisson_sampler),
    ("mm1-wait-sim-match", check_mm1_wait),
    ("decision-branch-coverage", check_decision_branches),
    ("battery-bounds", check_battery_bounds),
    ("capacity-conservation", check_capacity_conservation),
    ("class2-priority", check_class2_priority),
    ("surplus-reallocation-exactness", check_redistribution),
    ("run-determinism", check_run_determinism),
    ("capacity-sweep-trends", check_capacity_trends),
    ("arrival-rate-sweep-trends", check_lambda_trends),
]


def run_checks(fault: str | None = None) -> Iterable[tuple[str, bool, str]]:
    """Run every check in order, yielding (name, ok, detail)."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; valid: {', '.join(FAULTS)}")
    for name, fn in CHECKS:
        ok, detail = fn(fault)
        yield name, ok, detail
