"""Workload queue: FIFO order, bounded parallelism, supersede."""

from __future__ import annotations

import threading
import time

import pytest

from gridbook.service import Superseded, WorkloadQueue


def test_sequential_when_single_slot():
    q = WorkloadQueue(max_parallel=1)
    active = []
    peak = []

    def job(tag):
        def run():
            active.append(tag)
            peak.append(len(active))
            time.sleep(0.02)
            active.remove(tag)
            return tag
        return run

    results = []
    threads = [
        threading.Thread(
            target=lambda t=t: results.append(q.run(("s", t), job(t)))
        )
        for t in range(4)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == [0, 1, 2, 3]
    assert max(peak) == 1  # never two executing at once


def test_bounded_parallelism():
    q = WorkloadQueue(max_parallel=3)
    lock = threading.Lock()
    state = {"active": 0, "peak": 0}

    def run():
        with lock:
            state["active"] += 1
            state["peak"] = max(state["peak"], state["active"])
        time.sleep(0.03)
        with lock:
            state["active"] -= 1

    threads = [
        threading.Thread(target=lambda t=t: q.run(("s", t), run))
        for t in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 3


def test_supersede_waiting_request():
    """Of three same-key requests queued behind a slow job, the middle one
    is superseded: only two of the three execute."""
    q = WorkloadQueue(max_parallel=1)
    executed = []
    release = threading.Event()

    def blocker():
        release.wait(5)

    def job(tag):
        def run():
            executed.append(tag)
        return run

    results = {}

    def submit(tag, delay):
        time.sleep(delay)
        try:
            q.run(("sess", "elem"), job(tag))
            results[tag] = "ok"
        except Superseded:
            results[tag] = "superseded"

    t0 = threading.Thread(target=lambda: q.run(("other", 0), blocker))
    t0.start()
    time.sleep(0.05)
    t1 = threading.Thread(target=submit, args=("a", 0.0))
    t2 = threading.Thread(target=submit, args=("b", 0.1))
    t1.start()
    t2.start()
    time.sleep(0.3)
    release.set()
    for t in (t0, t1, t2):
        t.join()
    assert results == {"a": "superseded", "b": "ok"}
    assert executed == ["b"]


def test_supersede_cancels_running():
    q = WorkloadQueue(max_parallel=2)
    started = threading.Event()
    cancelled = threading.Event()

    def slow():
        started.set()
        cancelled.wait(5)
        if cancelled.is_set():
            raise RuntimeError("interrupted")
        return "slow"

    outcome = {}

    def first():
        try:
            q.run(("s", "e"), slow, cancel=cancelled.set)
            outcome["first"] = "ok"
        except Superseded:
            outcome["first"] = "superseded"

    t1 = threading.Thread(target=first)
    t1.start()
    started.wait(5)
    assert q.run(("s", "e"), lambda: "fast") == "fast"
    t1.join()
    assert outcome["first"] == "superseded"
    assert cancelled.is_set()  # driver cancel was invoked


def test_errors_propagate():
    q = WorkloadQueue(max_parallel=1)
    with pytest.raises(ValueError):
        q.run(("s", 1), lambda: (_ for _ in ()).throw(ValueError("x")))
    # the queue stays usable afterwards
    assert q.run(("s", 2), lambda: 42) == 42
