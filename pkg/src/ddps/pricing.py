"""Unit-price functions of the edge server.

Five schemes share one interface. The native scheme prices a grant by the
base-10 log of the requested capacity, scaled by the fraction of the
server's remaining capacity it consumes; the four reference schemes price
by a flat negotiated rate, the reciprocal of the buyer's own CPU speed, or
a linear/quadratic function of the utilization fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "STRATEGIES",
    "PricingParams",
    "Quote",
    "PricingEngine",
    "CapacityError",
    "processing_time",
    "ddps_payment",
    "ddps_unit_price",
    "payment_gradient_data",
    "payment_gradient_capacity",
    "uniform_payment",
    "differentiated_payment",
    "linear_payment",
    "nonlinear_payment",
]

STRATEGIES = ("ddps", "uniform", "differentiated", "linear", "nonlinear")


class CapacityError(ValueError):
    """Requested capacity exceeds what the server has left."""


@dataclass(frozen=True)
class PricingParams:
    """Knobs of the pricing schemes."""

    d: float = 1.0   # log offset; must stay >= 1 so the bid is never negative
    a: float = 1.0   # slope of the linear / quadratic reference prices
    b: float = 0.1   # intercept (linear) or linear term (quadratic)
    uniform_price_set: tuple[float, ...] | None = None  # override candidates

    def __post_init__(self) -> None:
        if self.d < 1.0:
            raise ValueError("log offset d must not be smaller than 1")
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be non-negative")
        if self.uniform_price_set is not None:
            if not self.uniform_price_set or any(x <= 0 for x in self.uniform_price_set):
                raise ValueError("uniform price candidates must be positive")


@dataclass(frozen=True)
class Quote:
    """One priced grant: scheme, rate per second, runtime and total charge."""

    strategy: str
    unit_price: float
    processing_time: float
    payment: float


def processing_time(h: float, q: float, F_i: float) -> float:
    """Server-side execution time of q bits at h cycles each on F_i cycle/s."""
    if F_i <= 0:
        raise ValueError("allocated capacity must be positive")
    if q < 0:
        raise ValueError("q must be non-negative")
    return h * q / F_i


def _check_capacity(F_i: float, F_t: float) -> None:
    if F_i < 0:
        raise ValueError("F_i must be non-negative")
    if F_i > F_t:
        raise CapacityError(f"F_i={F_i:.4g} exceeds remaining capacity F_t={F_t:.4g}")


def ddps_unit_price(F_i: float, F_t: float, d: float = 1.0) -> float:
    """Price per second: utilization fraction times lg of the capacity bought."""
    if d < 1.0:
        raise ValueError("log offset d must not be smaller than 1")
    _check_capacity(F_i, F_t)
    return (F_i / F_t) * math.log10(F_i + d)


def ddps_payment(h: float, q: float, F_i: float, F_t: float, d: float = 1.0) -> float:
    """Total charge (h*q/F_t) * lg(F_i + d); zero capacity bids zero at d=1."""
    if d < 1.0:
        raise ValueError("log offset d must not be smaller than 1")
    if q < 0:
        raise ValueError("q must be non-negative")
    _check_capacity(F_i, F_t)
    return (h * q / F_t) * math.log10(F_i + d)


def payment_gradient_data(h: float, F_i: float, F_t: float, d: float = 1.0) -> float:
    """Analytic d(payment)/dq: (h/F_t) * lg(F_i + d)."""
    return (h / F_t) * math.log10(F_i + d)


def payment_gradient_capacity(h: float, q: float, F_i: float, F_t: float, d: float = 1.0) -> float:
    """Analytic d(payment)/dF_i: h*q / (F_t * (F_i + d) * ln 10)."""
    return h * q / (F_t * (F_i + d) * math.log(10.0))


def uniform_payment(
    users: list[tuple[float, float, float]], F_t: float
) -> tuple[float | None, list[float]]:
    """Single negotiated rate charged to every offloader.

    ``users`` holds (h, q, F_loc) per candidate. Candidate rates are the
    reciprocals of the users' own CPU speeds, announced in descending
    order; a user joins when the rate does not exceed its opportunity cost
    1/F_loc. Capacity is split among joiners in proportion to offloaded
    data. The rate kept is the revenue maximiser, ties broken toward
    serving more users. Returns (rate, per-user payments).
    """
    if not users:
        raise ValueError("need at least one candidate user")
    if F_t <= 0:
        return None, [0.0] * len(users)
    candidates = sorted({1.0 / f_loc for _, _, f_loc in users}, reverse=True)
    best: tuple[float, int, float, list[float]] | None = None
    for mu in candidates:
        joined = [i for i, (_, _, f_loc) in enumerate(users) if 1.0 / f_loc >= mu]
        q_total = sum(users[i][1] for i in joined)
        if q_total <= 0:
            continue
        payments = [0.0] * len(users)
        for i in joined:
            h, q, _ = users[i]
            share = F_t * q / q_total
            payments[i] = mu * processing_time(h, q, share) if q > 0 else 0.0
        revenue = sum(payments)
        key = (revenue, len(joined), mu, payments)
        if best is None or (revenue, len(joined)) > (best[0], best[1]):
            best = key
    if best is None:
        return None, [0.0] * len(users)
    return best[2], best[3]


def differentiated_payment(h: float, q: float, F_loc: float, F_i: float, F_t: float) -> float:
    """Per-user rate equal to the reciprocal of that user's CPU speed."""
    if F_loc <= 0:
        raise ValueError("F_loc must be positive")
    _check_capacity(F_i, F_t)
    return (1.0 / F_loc) * processing_time(h, q, F_i) if q > 0 else 0.0


def linear_payment(h: float, q: float, F_i: float, F_t: float, a: float, b: float) -> float:
    """Rate a*x + b on the utilization fraction x = F_i/F_t."""
    _check_capacity(F_i, F_t)
    if q == 0:
        return 0.0
    return (a * F_i / F_t + b) * processing_time(h, q, F_i)


def nonlinear_payment(h: float, q: float, F_i: float, F_t: float, a: float, b: float) -> float:
    """Rate a*x^2 + b*x on the utilization fraction; zero at x=0, convex."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    _check_capacity(F_i, F_t)
    if q == 0:
        return 0.0
    x = F_i / F_t
    return (a * x * x + b * x) * processing_time(h, q, F_i)


class PricingEngine:
    """Per-run quoting front end for one strategy.

    Owned by a single simulation run; ``begin_slot`` installs the slot's
    negotiated uniform rate before grants are priced.
    """

    def __init__(self, strategy: str, params: PricingParams, h: float, F_total: float):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
        self.strategy = strategy
        self.params = params
        self.h = h
        self.F_total = F_total
        self._mu: float | None = None

    @property
    def redistributes(self) -> bool:
        # Only the log-priced scheme re-quotes upward with extra capacity;
        # under time-based rates extra capacity would lower the charge.
        return self.strategy == "ddps"

    def begin_slot(self, mu: float | None = None) -> None:
        self._mu = mu

    def unit_price(self, q: float, F_i: float, F_t: float, F_loc: float) -> float:
        p = self.params
        if self.strategy == "ddps":
            return ddps_unit_price(F_i, F_t, p.d)
        if self.strategy == "uniform":
            return self._mu if self._mu is not None else 1.0 / F_loc
        if self.strategy == "differentiated":
            return 1.0 / F_loc
        x = F_i / F_t
        if self.strategy == "linear":
            return p.a * x + p.b
        return p.a * x * x + p.b * x

    def quote(self, q: float, F_i: float, F_t: float, F_loc: float) -> Quote:
        """Price one grant at the capacity remaining when it was made."""
        if q == 0:
            return Quote(self.strategy, 0.0, 0.0, 0.0)
        _check_capacity(F_i, F_t)
        t_p = processing_time(self.h, q, F_i)
        w = self.unit_price(q, F_i, F_t, F_loc)
        return Quote(self.strategy, w, t_p, w * t_p)

    def drop_quote(self, q: float, t_req: float, t_up: float, t_down: float, F_loc: float) -> float:
        """Charge attributed to a dropped task for the penalty account.

        No capacity was agreed, so the capacity is reconstructed from the
        task's whole delay tolerance (no queueing term) and capped at the
        installed total; the rate is quoted against installed capacity.
        """
        slack = t_req - t_up - t_down
        f_i = self.F_total if slack <= 0 else min(self.h * q / slack, self.F_total)
        return self.quote(q, f_i, self.F_total, F_loc).payment
