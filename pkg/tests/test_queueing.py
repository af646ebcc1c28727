"""Tests for arrival sampling and the closed-form queue estimates."""

import math

import numpy as np
import pytest

from ddps.queueing import (
    QueueParams,
    StabilityError,
    allocation_latencies,
    mm1_wait,
    sample_arrivals,
    service_rate,
    simulate_batched_latency,
    simulate_mm1_wait,
)


class TestArrivals:
    def test_same_seed_same_stream(self):
        a = sample_arrivals(0.3, 42, 1000)
        b = sample_arrivals(0.3, 42, 1000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = sample_arrivals(0.3, 1, 1000)
        b = sample_arrivals(0.3, 2, 1000)
        assert not np.array_equal(a, b)

    def test_mean_within_three_sigma(self):
        slots = 200_000
        counts = sample_arrivals(0.3, 7, slots)
        assert abs(counts.mean() - 0.3) < 3 * math.sqrt(0.3 / slots)

    def test_vanishing_rate_gives_zeros(self):
        counts = sample_arrivals(1e-9, 3, 10_000)
        assert counts.sum() == 0

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            sample_arrivals(0.0, 1, 10)


class TestWaitFormula:
    def test_table_point(self):
        assert mm1_wait(0.3, 1.0) == pytest.approx(0.3 / 0.7)

    def test_no_arrivals_no_wait(self):
        assert mm1_wait(0.0, 1.0) == 0.0

    def test_second_point(self):
        assert mm1_wait(0.5, 2.0) == pytest.approx(1.0 / 6.0)

    def test_unstable_rejected(self):
        with pytest.raises(StabilityError):
            mm1_wait(1.0, 1.0)

    def test_matches_simulation(self):
        want = mm1_wait(0.3, 1.0)
        got = simulate_mm1_wait(0.3, 1.0, events=200_000)
        assert got == pytest.approx(want, rel=0.05)


class TestServiceRate:
    def test_head_average(self):
        assert service_rate([0.5, 0.5, 1.0], 3) == pytest.approx(4.5)

    def test_identical_deadlines(self):
        assert service_rate([0.25] * 8, 8) == pytest.approx(32.0)

    def test_single_deadline(self):
        assert service_rate([0.5], 1) == pytest.approx(2.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            service_rate([], 3)

    def test_rejects_zero_deadline(self):
        with pytest.raises(ValueError):
            service_rate([0.0, 0.5], 2)

    def test_params_stability(self):
        with pytest.raises(StabilityError):
            QueueParams(lam=2.0, mu=1.0, max_N=4)


class TestAllocationLatencies:
    def test_worked_example(self):
        assert allocation_latencies(4, 2, 1.0, 1.0, 1.0) == pytest.approx((4.0, 3.0))

    def test_second_example(self):
        assert allocation_latencies(6, 2, 1.0, 1.0, 1.0) == pytest.approx((6.0, 4.0))

    def test_tie_when_batch_is_everyone(self):
        t1, t2 = allocation_latencies(8, 8, 2.0, 3.0, 5.0)
        assert t1 == pytest.approx(t2)

    def test_rejects_non_divisor(self):
        with pytest.raises(ValueError):
            allocation_latencies(5, 2, 1.0, 1.0, 1.0)

    def test_dominance_exhaustive(self):
        for n in range(1, 65):
            for k in range(1, n + 1):
                if n % k:
                    continue
                t1, t2 = allocation_latencies(n, k, 1.0, 1.0, 1.0)
                assert t1 >= t2 - 1e-12
                assert (abs(t1 - t2) < 1e-12) == (n == k)

    def test_simulation_matches_closed_form(self):
        for n, k in [(4, 2), (12, 3), (64, 8), (48, 1), (60, 60)]:
            _, t2 = allocation_latencies(n, k, 3.0, 2.5, 7.0)
            sim = simulate_batched_latency(n, k, 3.0, 2.5, 7.0)
            assert sim == pytest.approx(t2, rel=1e-12)
