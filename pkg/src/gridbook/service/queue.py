"""Workload management queue.

FIFO admission with bounded parallelism, plus supersede-cancellation: a
new request under the same key (session, element) cancels the previous
one — a pending predecessor never executes, a running predecessor is
interrupted through its cancel callback.  The superseded caller sees a
``Superseded`` error (HTTP 409 at the service edge).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, TypeVar

T = TypeVar("T")


class Superseded(Exception):
    """This request was replaced by a newer one for the same key."""


class _Request:
    __slots__ = ("key", "seq", "superseded", "running", "cancel")

    def __init__(self, key, seq: int,
                 cancel: Optional[Callable[[], None]]):
        self.key = key
        self.seq = seq
        self.superseded = False
        self.running = False
        self.cancel = cancel


class WorkloadQueue:
    def __init__(self, max_parallel: int = 4):
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.max_parallel = max_parallel
        self._cond = threading.Condition()
        self._running = 0
        self._pending: list[_Request] = []  # FIFO order
        self._latest: dict[object, int] = {}  # key -> newest seq
        self._seq = 0

    def run(self, key, execute: Callable[[], T],
            cancel: Optional[Callable[[], None]] = None) -> T:
        """Execute under admission control.  Raises Superseded when a newer
        request for the same key arrives before or during execution;
        `cancel` is invoked (once) if that happens mid-execution."""
        with self._cond:
            self._seq += 1
            req = _Request(key, self._seq, cancel)
            if key is not None:
                self._latest[key] = req.seq
                # cancel a running predecessor; pending ones just get
                # skipped when they reach the front
                for other in self._pending:
                    if other.key == key and other.seq < req.seq \
                            and not other.superseded:
                        other.superseded = True
                        if other.running and other.cancel is not None:
                            other.cancel()
            self._pending.append(req)
            while True:
                if req.superseded and not req.running:
                    self._pending.remove(req)
                    self._cond.notify_all()
                    raise Superseded(str(key))
                at_front = self._front_index(req)
                if self._running < self.max_parallel and at_front:
                    break
                self._cond.wait()
            req.running = True
            self._running += 1
        error: Optional[BaseException] = None
        result: Optional[T] = None
        try:
            result = execute()
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            error = exc
        with self._cond:
            self._running -= 1
            self._pending.remove(req)
            was_superseded = req.superseded
            if key is not None and self._latest.get(key) == req.seq:
                del self._latest[key]
            self._cond.notify_all()
        if was_superseded:
            # an interruption error is expected here; the 409 wins
            raise Superseded(str(key)) from error
        if error is not None:
            raise error
        return result  # type: ignore[return-value]

    def _front_index(self, req: _Request) -> bool:
        """FIFO among requests that are neither running nor superseded."""
        for other in self._pending:
            if other.running or other.superseded:
                continue
            return other is req
        return False
