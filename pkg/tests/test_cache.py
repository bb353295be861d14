"""Query directory: single-flight, completion, failure, eviction."""

from __future__ import annotations

import threading

import pytest

from gridbook.cache import (
    ExecutionFailed,
    Hit,
    Join,
    MaterializationSpec,
    QueryDirectory,
    Ticket,
)


def test_miss_then_hit():
    d = QueryDirectory()
    outcome = d.lookup_or_register("q1")
    assert isinstance(outcome, Ticket)
    outcome.complete("r_q1", True)
    again = d.lookup_or_register("q1")
    assert isinstance(again, Hit)
    assert again.result_table_ref == "r_q1"
    assert again.complete_flag


def test_concurrent_requests_single_flight():
    d = QueryDirectory()
    outcomes = []
    barrier = threading.Barrier(32)

    def go():
        barrier.wait()
        outcomes.append(d.lookup_or_register("q1"))

    threads = [threading.Thread(target=go) for _ in range(32)]
    for t in threads:
        t.start()
    # let everyone register before completing
    for t in threads:
        t.join()
    tickets = [o for o in outcomes if isinstance(o, Ticket)]
    joins = [o for o in outcomes if isinstance(o, Join)]
    assert len(tickets) == 1
    assert len(joins) == 31
    tickets[0].complete("r", True)
    for j in joins:
        assert j.wait(timeout=5).result_table_ref == "r"


def test_failure_clears_entry():
    d = QueryDirectory()
    ticket = d.lookup_or_register("q1")
    waiter = d.lookup_or_register("q1")
    ticket.fail("boom")
    with pytest.raises(ExecutionFailed):
        waiter.wait(timeout=5)
    # a failed query is not cached: next request misses again
    assert isinstance(d.lookup_or_register("q1"), Ticket)


def test_double_settle_rejected():
    d = QueryDirectory()
    ticket = d.lookup_or_register("q1")
    ticket.complete("r", True)
    with pytest.raises(Exception):
        ticket.complete("r", True)


def test_lru_eviction_drops_oldest_complete():
    dropped = []
    d = QueryDirectory(capacity=2, drop_table=dropped.append)
    for i in range(3):
        d.lookup_or_register(f"q{i}").complete(f"r{i}", True)
    assert dropped == ["r0"]
    assert isinstance(d.lookup_or_register("q0"), Ticket)  # evicted
    d.lookup_or_register("q2")  # still cached


def test_in_flight_never_evicted():
    dropped = []
    d = QueryDirectory(capacity=1, drop_table=dropped.append)
    pending = d.lookup_or_register("inflight")
    d.lookup_or_register("done").complete("r_done", True)
    assert "r_done" in dropped or len(d) <= 2
    # the in-flight entry must still be joinable
    join = d.lookup_or_register("inflight")
    assert isinstance(join, Join)
    pending.complete("r_in", True)
    assert join.wait(timeout=5).result_table_ref == "r_in"


def test_unpaged_index():
    d = QueryDirectory()
    d.lookup_or_register("paged-q", unpaged_id="base-q").complete("r", True)
    entry = d.lookup_unpaged("base-q")
    assert entry is not None
    assert d.lookup_unpaged("other") is None


def test_materialization_spec_due():
    spec = MaterializationSpec("e1", cadence_seconds=60,
                               target_table="mat_e1")
    assert spec.due(now=0.0)  # never refreshed
    spec.last_refresh = 100.0
    assert not spec.due(now=130.0)
    assert spec.due(now=161.0)
    with pytest.raises(ValueError):
        MaterializationSpec("e1", cadence_seconds=0, target_table="t")
