"""Arrival sampling and closed-form queue estimates.

The sampler is exact inverse-CDF over a counter-based generator (Philox),
so streams are reproducible bit-for-bit across platforms. The waiting-time
formula is the classic M/M/1 queue-delay; the simulator uses it only as
the planning estimate inside capacity requests, measured waits are
reported separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QueueParams",
    "StabilityError",
    "make_rng",
    "sample_arrivals",
    "mm1_wait",
    "service_rate",
    "allocation_latencies",
    "simulate_batched_latency",
    "simulate_mm1_wait",
]


class StabilityError(ValueError):
    """Arrival rate at or above service rate; the queue has no steady state."""


@dataclass(frozen=True)
class QueueParams:
    lam: float    # task arrival rate, tasks/slot
    mu: float     # service rate, tasks/slot
    max_N: int    # maximum concurrently admitted tasks

    def __post_init__(self) -> None:
        if not 0 < self.lam < self.mu:
            raise StabilityError("need 0 < lambda < mu for a stable queue")
        if self.max_N < 1:
            raise ValueError("max_N must be at least 1")


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based generator; the one RNG used everywhere."""
    return np.random.Generator(np.random.Philox(seed))


def _poisson_cdf_table(lam: float) -> np.ndarray:
    """Cumulative Poisson probabilities, extended until the tail vanishes."""
    terms = [math.exp(-lam)]
    while 1.0 - sum(terms) > 1e-15 and len(terms) < 200:
        k = len(terms)
        terms.append(terms[-1] * lam / k)
    return np.cumsum(terms)


def sample_arrivals(
    lam: float, rng_seed: int | np.random.SeedSequence | np.random.Generator, slots: int
) -> np.ndarray:
    """Per-slot Poisson arrival counts, reproducible from the seed."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if slots < 0:
        raise ValueError("slots must be non-negative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    u = rng.random(slots)
    cdf = _poisson_cdf_table(lam)
    return np.searchsorted(cdf, u, side="left").astype(np.int64)


def mm1_wait(lam: float, mu: float) -> float:
    """Mean queueing delay (lam/mu^2) / (1 - lam/mu) of an M/M/1 queue."""
    if lam < 0 or mu <= 0:
        raise ValueError("rates must be non-negative, mu positive")
    if lam >= mu:
        raise StabilityError(f"lambda={lam} >= mu={mu}: queue is unstable")
    rho = lam / mu
    return (lam / mu**2) / (1.0 - rho)


def service_rate(deadlines: list[float], max_N: int) -> float:
    """Service rate from the mean of the first max_N deadlines."""
    if max_N < 1:
        raise ValueError("max_N must be at least 1")
    if not deadlines:
        raise ValueError("need at least one deadline")
    head = deadlines[: min(max_N, len(deadlines))]
    if any(t <= 0 for t in head):
        raise ValueError("deadlines must be positive")
    t_ave = sum(head) / len(head)
    return len(head) / t_ave


def allocation_latencies(N: int, K: int, h: float, L: float, F: float) -> tuple[float, float]:
    """Mean execution delay of two capacity-allocation disciplines.

    Sharing F among all N identical jobs at once gives h*L/(F/N); serving
    them K at a time in arrival order gives h*(K+N)*L/(2F). Restricted to
    K dividing N.
    """
    if N < 1 or K < 1 or K > N:
        raise ValueError("need 1 <= K <= N")
    if N % K != 0:
        raise ValueError("K must divide N")
    if h <= 0 or L <= 0 or F <= 0:
        raise ValueError("h, L and F must be positive")
    t_shared = h * L / (F / N)
    t_batched = h * (K + N) * L / (2.0 * F)
    return t_shared, t_batched


def simulate_batched_latency(N: int, K: int, h: float, L: float, F: float) -> float:
    """Brute-force mean delay of serving N identical jobs K at a time.

    Independent oracle for the batched closed form: batch i finishes at
    i * h*L/(F/K); every job in it sees that delay.
    """
    if N % K != 0:
        raise ValueError("K must divide N")
    per_batch = h * L / (F / K)
    delays = [(i + 1) * per_batch for i in range(N // K) for _ in range(K)]
    return sum(delays) / N


def simulate_mm1_wait(lam: float, mu: float, events: int, seed: int = 7) -> float:
    """Long-run mean queueing delay of a simulated M/M/1 queue.

    Lindley recursion over exponential interarrivals and services; the
    statistical oracle for the closed-form delay.
    """
    if lam >= mu:
        raise StabilityError("unstable queue")
    rng = make_rng(seed)
    slack = (rng.exponential(1.0 / mu, size=events) - rng.exponential(1.0 / lam, size=events)).tolist()
    wait = 0.0
    acc = 0.0
    for s in slack:
        acc += wait
        wait = max(0.0, wait + s)
    return acc / events
