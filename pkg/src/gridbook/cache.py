"""Server-side directory of recent queries.

The directory holds *references* to results (warehouse table names keyed
by query id), never result rows.  It provides single-flight sharing: for
any query id, exactly one concurrent caller is told to execute (Miss);
everyone else either joins the in-flight execution (Join) or gets the
finished reference (Hit).  Complete, unpaginated entries are additionally
indexed by their page-stripped fingerprint so a new page over the same
underlying plan can be served from cache and derived locally.

Failed executions are not cached: the entry is removed and the next
caller gets a fresh Miss.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional


class CacheError(Exception):
    pass


class ExecutionFailed(CacheError):
    """Raised to joiners when the execution they were waiting on failed."""


@dataclass
class DirectoryEntry:
    query_id: str
    state: str  # "in-flight" | "complete"
    result_table_ref: Optional[str] = None
    complete_flag: bool = False  # stored result is unpaginated
    unpaged_id: Optional[str] = None
    created_at: float = 0.0
    last_used_at: float = 0.0
    waiters: int = 0
    done: threading.Event = field(default_factory=threading.Event, repr=False)
    error: Optional[str] = None


@dataclass(frozen=True)
class Hit:
    result_table_ref: str
    complete_flag: bool
    query_id: str


class Ticket:
    """Obligation to execute: resolve with complete() or fail()."""

    def __init__(self, directory: "QueryDirectory", query_id: str):
        self._directory = directory
        self.query_id = query_id
        self._settled = False

    def complete(self, result_table_ref: str, complete_flag: bool) -> None:
        self._settle()
        self._directory._complete(self.query_id, result_table_ref,
                                  complete_flag)

    def fail(self, error: str) -> None:
        self._settle()
        self._directory._fail(self.query_id, error)

    def _settle(self) -> None:
        if self._settled:
            raise CacheError(f"ticket for {self.query_id} already settled")
        self._settled = True


class Join:
    """Handle on someone else's in-flight execution."""

    def __init__(self, directory: "QueryDirectory", entry: DirectoryEntry):
        self._directory = directory
        self._entry = entry
        self.query_id = entry.query_id

    def wait(self, timeout: Optional[float] = None) -> Hit:
        if not self._entry.done.wait(timeout):
            raise CacheError(f"timed out waiting on {self.query_id}")
        return self._directory._after_wait(self._entry)


class QueryDirectory:
    """Shared mutable registry with atomic transitions; all operations are
    thread-safe.  ``drop_table`` is called (outside the lock) with the
    result_table_ref of each evicted entry."""

    def __init__(self, capacity: int = 256,
                 drop_table: Optional[Callable[[str], None]] = None,
                 clock: Callable[[], float] = time.monotonic):
        self.capacity = capacity
        self._drop_table = drop_table
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, DirectoryEntry] = {}
        self._unpaged: dict[str, str] = {}  # unpaged fingerprint -> query_id

    def lookup_or_register(self, query_id: str,
                           unpaged_id: Optional[str] = None
                           ) -> Hit | Join | Ticket:
        doomed: list[str] = []
        with self._lock:
            now = self._clock()
            entry = self._entries.get(query_id)
            if entry is not None:
                entry.last_used_at = now
                if entry.state == "complete":
                    assert entry.result_table_ref is not None
                    return Hit(entry.result_table_ref, entry.complete_flag,
                               query_id)
                entry.waiters += 1
                return Join(self, entry)
            entry = DirectoryEntry(
                query_id=query_id, state="in-flight", unpaged_id=unpaged_id,
                created_at=now, last_used_at=now,
            )
            self._entries[query_id] = entry
            doomed = self._evict_locked()
        self._drop(doomed)
        return Ticket(self, query_id)

    def lookup_unpaged(self, unpaged_id: str) -> Optional[Hit]:
        """A complete, unpaginated entry covering the same plan minus
        paging, if any (for local re-paging)."""
        with self._lock:
            qid = self._unpaged.get(unpaged_id)
            if qid is None:
                return None
            entry = self._entries.get(qid)
            if entry is None or entry.state != "complete":
                return None
            entry.last_used_at = self._clock()
            assert entry.result_table_ref is not None
            return Hit(entry.result_table_ref, entry.complete_flag, qid)

    def entries(self) -> list[DirectoryEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.query_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    # -- transitions (driven by Ticket) --------------------------------------

    def _complete(self, query_id: str, result_table_ref: str,
                  complete_flag: bool) -> None:
        doomed: list[str] = []
        with self._lock:
            entry = self._entries.get(query_id)
            if entry is None or entry.state != "in-flight":
                raise CacheError(f"no in-flight entry for {query_id}")
            entry.state = "complete"
            entry.result_table_ref = result_table_ref
            entry.complete_flag = complete_flag
            entry.last_used_at = self._clock()
            if complete_flag and entry.unpaged_id:
                self._unpaged[entry.unpaged_id] = query_id
            entry.done.set()
            doomed = self._evict_locked()
        self._drop(doomed)

    def _fail(self, query_id: str, error: str) -> None:
        with self._lock:
            entry = self._entries.get(query_id)
            if entry is None or entry.state != "in-flight":
                raise CacheError(f"no in-flight entry for {query_id}")
            entry.error = error
            del self._entries[query_id]
            entry.done.set()

    def _after_wait(self, entry: DirectoryEntry) -> Hit:
        with self._lock:
            entry.waiters -= 1
            if entry.error is not None:
                raise ExecutionFailed(entry.error)
            assert entry.result_table_ref is not None
            return Hit(entry.result_table_ref, entry.complete_flag,
                       entry.query_id)

    # -- eviction ------------------------------------------------------------

    def _evict_locked(self) -> list[str]:
        """LRU-evict complete entries beyond capacity; never in-flight
        ones.  Returns table refs to drop (caller drops outside lock)."""
        if len(self._entries) <= self.capacity:
            return []
        complete = sorted(
            (e for e in self._entries.values() if e.state == "complete"),
            key=lambda e: e.last_used_at,
        )
        doomed: list[str] = []
        excess = len(self._entries) - self.capacity
        for entry in complete[:excess]:
            del self._entries[entry.query_id]
            if entry.unpaged_id and \
                    self._unpaged.get(entry.unpaged_id) == entry.query_id:
                del self._unpaged[entry.unpaged_id]
            if entry.result_table_ref:
                doomed.append(entry.result_table_ref)
        return doomed

    def _drop(self, refs: list[str]) -> None:
        if self._drop_table is not None:
            for ref in refs:
                self._drop_table(ref)


# ---------------------------------------------------------------------------
# Scheduled materialization


@dataclass
class MaterializationSpec:
    """Refresh an element's output into a warehouse table on a cadence."""

    element_id: str
    cadence_seconds: float
    target_table: str
    last_refresh: Optional[float] = None

    def __post_init__(self) -> None:
        if self.cadence_seconds <= 0:
            raise ValueError("cadence must be positive")

    def due(self, now: float) -> bool:
        if self.last_refresh is None:
            return True
        return now - self.last_refresh >= self.cadence_seconds
