"""Tests for the slot admission loop, deferral queue and settlement."""

import math

import pytest

from ddps.policy import DecisionKind, OffloadDecision, TaskRequest
from ddps.pricing import PricingEngine, PricingParams
from ddps.scheduler import (
    ContractViolation,
    ServerState,
    penalty,
    redistribute_surplus,
    run_slot,
    server_utility,
)

H = 1000.0
R = 1e7  # symmetric link rate used by the fixtures


def engine(strategy="ddps", f_total=6e9):
    return PricingEngine(strategy, PricingParams(), h=H, F_total=f_total)


def offload(uid, slot, f_req, t_req, q=5e5, r=0.2):
    task = TaskRequest(user_id=uid, l=2 * q, t_req=t_req, F_loc=1e9, arrival_slot=slot)
    t_up, t_down = q / R, q * r / R
    t_exp = max((task.l - q) * H / task.F_loc, t_up + H * q / f_req + t_down)
    dec = OffloadDecision(
        kind=DecisionKind.PARTIAL, q=q, F_req=f_req,
        t_expected=t_exp, t_up=t_up, t_down=t_down,
    )
    return task, dec


class TestAdmission:
    def test_serves_everything_that_fits(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [offload(0, 0, 1e9, 4.0), offload(1, 0, 2e9, 4.0), offload(2, 0, 2e9, 4.0)]
        out = run_slot(state, arrivals, engine(), 0)
        assert len(out.served) == 3
        assert state.F_t == pytest.approx(0.0)  # ddps surplus was redistributed

    def test_remaining_capacity_without_redistribution(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [offload(0, 0, 1e9, 4.0), offload(1, 0, 2e9, 4.0), offload(2, 0, 2e9, 4.0)]
        out = run_slot(state, arrivals, engine("linear"), 0)
        assert len(out.served) == 3
        assert state.F_t == pytest.approx(1e9)

    def test_conservation_every_step(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [offload(i, 0, 1.2e9, 4.0) for i in range(4)]
        out = run_slot(state, arrivals, engine("linear"), 0)
        granted = math.fsum(g.F_i for g in out.served)
        assert granted + state.F_t == pytest.approx(6e9, rel=1e-12)

    def test_defer_when_deadline_has_slack(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        big = offload(0, 0, 5.5e9, 4.0)
        waiting = offload(1, 0, 2e9, 4.0)
        out = run_slot(state, [big, waiting], engine("linear"), 0)
        assert [g.task.user_id for g in out.served] == [0]
        assert len(out.deferred) == 1
        out1 = run_slot(state, [offload(2, 1, 1e9, 4.0)], engine("linear"), 1)
        assert [g.task.user_id for g in out1.served] == [1, 2]
        assert out1.served[0].from_deferral
        assert out1.served[0].waited_slots == 1

    def test_drop_when_no_slack(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        big = offload(0, 0, 5.5e9, 4.0)
        # expected latency pinned at the deadline: no room to wait
        task = TaskRequest(user_id=1, l=1e6, t_req=1.0, F_loc=1e9, arrival_slot=0)
        dec = OffloadDecision(
            kind=DecisionKind.PARTIAL, q=5e5, F_req=2e9, t_expected=1.0,
            t_up=0.05, t_down=0.01,
        )
        out = run_slot(state, [big, (task, dec)], engine("linear"), 0)
        assert len(out.dropped) == 1
        assert out.dropped[0].reason == "capacity"
        assert out.penalty > 0

    def test_admission_cutoff(self):
        # once remaining capacity falls to the cutoff nothing more is granted
        state = ServerState(F_total=2e9, epsilon=1.5e9, gamma=0.5)
        out = run_slot(
            state,
            [offload(0, 0, 0.9e9, 4.0), offload(1, 0, 0.4e9, 4.0)],
            engine("linear", f_total=2e9),
            0,
        )
        assert [g.task.user_id for g in out.served] == [0]
        assert len(out.deferred) == 1  # slack exists, so it waits

    def test_strict_grant_test_for_fresh_arrivals(self):
        # a request equal to remaining capacity is not granted (strict >)
        state = ServerState(F_total=2e9, epsilon=1e7, gamma=0.5)
        out = run_slot(state, [offload(0, 0, 2e9, 4.0)], engine("linear", 2e9), 0)
        assert not out.served
        assert len(out.deferred) == 1

    def test_deferred_grant_allows_equality(self):
        # the deferral drain uses >= while fresh admission uses strict >
        state = ServerState(F_total=2e9, epsilon=1e7, gamma=0.5)
        run_slot(state, [offload(0, 0, 2e9, 4.0)], engine("linear", 2e9), 0)
        out = run_slot(state, [], engine("linear", 2e9), 1)
        assert [g.task.user_id for g in out.served] == [0]

    def test_rejects_local_decision(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        task = TaskRequest(user_id=0, l=1e6, t_req=1.0, F_loc=1e9, arrival_slot=0)
        local = OffloadDecision(kind=DecisionKind.LOCAL_ONLY, t_expected=1.0)
        with pytest.raises(ContractViolation):
            run_slot(state, [(task, local)], engine(), 0)

    def test_empty_slot(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        out = run_slot(state, [], engine(), 0)
        assert out.payments == 0.0
        assert out.penalty == 0.0
        assert out.server_utility == 0.0


class TestDeferralQueue:
    def test_expiry_is_final_and_penalized_once(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        hog = offload(0, 0, 5.9e9, 4.0)
        tight = offload(1, 0, 2e9, 1.2)  # one slot of waiting kills it
        run_slot(state, [hog, tight], engine("linear"), 0)
        out1 = run_slot(state, [], engine("linear"), 1)
        assert [d.task.user_id for d in out1.dropped] == [1]
        assert out1.dropped[0].reason == "expired"
        assert out1.penalty > 0
        out2 = run_slot(state, [], engine("linear"), 2)
        assert not out2.dropped

    def test_fcfs_within_class(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        hog = offload(0, 0, 5.9e9, 4.0)
        first = offload(1, 0, 2e9, 6.0)
        second = offload(2, 0, 2.5e9, 6.0)
        run_slot(state, [hog, first, second], engine("linear"), 0)
        out = run_slot(state, [], engine("linear"), 1)
        assert [g.task.user_id for g in out.served] == [1, 2]

    def test_head_of_line_blocking(self):
        # the drain stops at the first waiting entry that does not fit,
        # even when a later entry would
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        hog = offload(0, 0, 5.9e9, 4.0)
        huge1 = offload(1, 0, 5e9, 6.0)
        huge2 = offload(2, 0, 5e9, 6.0)
        small = offload(3, 0, 1e9, 6.0)
        run_slot(state, [hog, huge1, huge2, small], engine("linear"), 0)
        out1 = run_slot(state, [], engine("linear"), 1)
        assert [g.task.user_id for g in out1.served] == [1]
        out2 = run_slot(state, [], engine("linear"), 2)
        assert [g.task.user_id for g in out2.served] == [2, 3]

    def test_class2_priority_over_fresh(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        hog = offload(0, 0, 5.9e9, 4.0)
        waiting = offload(1, 0, 2e9, 6.0)
        run_slot(state, [hog, waiting], engine("linear"), 0)
        out = run_slot(state, [offload(2, 1, 1e9, 4.0)], engine("linear"), 1)
        grants = [g.task.user_id for g in out.served]
        assert grants.index(1) < grants.index(2)


class TestRedistribution:
    def test_shares_proportional_to_data(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [
            offload(0, 0, 1e9, 4.0, q=2e6),
            offload(1, 0, 1.5e9, 4.0, q=3e6),
            offload(2, 0, 2.5e9, 4.0, q=5e6),
        ]
        out = run_slot(state, arrivals, engine(), 0)
        audit = {r.user_id: r for r in out.redistribution}
        surplus = 6e9 - (1e9 + 1.5e9 + 2.5e9)
        assert audit[0].F_after - audit[0].F_before == pytest.approx(surplus * 0.2)
        assert audit[1].F_after - audit[1].F_before == pytest.approx(surplus * 0.3)
        assert audit[2].F_after - audit[2].F_before == pytest.approx(surplus * 0.5)
        assert math.fsum(g.F_i for g in out.served) == pytest.approx(6e9, rel=1e-9)
        assert state.F_t == 0.0

    def test_single_grantee_takes_everything(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        out = run_slot(state, [offload(0, 0, 1e9, 4.0)], engine(), 0)
        assert out.served[0].F_i == pytest.approx(6e9)

    def test_payments_rise_and_runtimes_fall(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [offload(0, 0, 1e9, 4.0, q=2e6), offload(1, 0, 2e9, 4.0, q=1e6)]
        out = run_slot(state, arrivals, engine(), 0)
        for r in out.redistribution:
            assert r.payment_after > r.payment_before
            assert r.t_after < r.t_before

    def test_latency_never_worsens(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        arrivals = [offload(0, 0, 1e9, 4.0, q=2e6), offload(1, 0, 2e9, 4.0, q=1e6)]
        expected = {t.user_id: d.t_expected for t, d in arrivals}
        out = run_slot(state, arrivals, engine(), 0)
        for g in out.served:
            assert g.latency <= expected[g.task.user_id] + 1e-12

    def test_no_op_without_grants(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        assert redistribute_surplus(state, [], engine()) == []

    def test_flat_rate_schemes_keep_surplus(self):
        state = ServerState(F_total=6e9, epsilon=1e7, gamma=0.5)
        out = run_slot(state, [offload(0, 0, 1e9, 4.0)], engine("uniform"), 0)
        assert not out.redistribution
        assert state.F_t == pytest.approx(5e9)


class TestSettlement:
    def test_penalty_weighting(self):
        assert penalty([1.0, 0.5], 0.5) == pytest.approx(0.75)

    def test_penalty_empty(self):
        assert penalty([], 0.3) == 0.0

    def test_penalty_weight_validated(self):
        with pytest.raises(ValueError):
            penalty([1.0], 1.0)

    def test_utility_is_revenue_minus_penalty(self):
        assert server_utility([4.0, 6.0], 0.75) == pytest.approx(9.25)

    def test_utility_zero_activity(self):
        assert server_utility([], 0.0) == 0.0

    def test_utility_can_go_negative(self):
        assert server_utility([1.0], 2.0) == pytest.approx(-1.0)
