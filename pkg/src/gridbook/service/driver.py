"""Warehouse driver: the only component that issues SQL.

Backed by an embedded SQLite database.  Besides raw execution it keeps
the service's metadata in the same file — declared column types (SQLite
column affinity would corrupt our storage model, so tables are created
with untyped columns and the logical schema lives in a side table),
per-table version tokens that feed plan fingerprints, saved documents,
and materialization schedules.  Result tables are ordinary warehouse
tables; no result rows ever live in service process state.

Concurrency: on-disk databases get one connection per executing thread
(SQLite handles file locking); a ``:memory:`` database is shared through
a single serialized connection.  Cancellation uses the connection's
interrupt call.
"""

from __future__ import annotations

import sqlite3
import threading
from typing import Optional

from ..model import SourceSpec
from ..values import ValueType

_META_TABLES = """
CREATE TABLE IF NOT EXISTS _gb_schemas (
    table_name TEXT NOT NULL,
    position INTEGER NOT NULL,
    column_name TEXT NOT NULL,
    value_type TEXT NOT NULL,
    PRIMARY KEY (table_name, position)
);
CREATE TABLE IF NOT EXISTS _gb_versions (
    table_name TEXT PRIMARY KEY,
    version INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS _gb_documents (
    doc_id TEXT PRIMARY KEY,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS _gb_materializations (
    element_id TEXT PRIMARY KEY,
    cadence_seconds REAL NOT NULL,
    target_table TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    last_refresh REAL
);
"""

_AFFINITY_TO_TYPE = [
    ("INT", ValueType.NUMBER),
    ("REAL", ValueType.NUMBER),
    ("FLOA", ValueType.NUMBER),
    ("DOUB", ValueType.NUMBER),
    ("NUM", ValueType.NUMBER),
    ("BOOL", ValueType.LOGICAL),
    ("DATE", ValueType.DATE),
    ("CHAR", ValueType.TEXT),
    ("TEXT", ValueType.TEXT),
    ("CLOB", ValueType.TEXT),
]


class DriverError(Exception):
    pass


def _q(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


class ExecutionHandle:
    """Cancellable in-flight statement."""

    def __init__(self, con: sqlite3.Connection):
        self._con = con
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True
        self._con.interrupt()


class SqliteWarehouseDriver:
    """Implements the planner's SchemaProvider/PlanProvider protocols and
    executes compiled queries.  Execution and cancel counters are exposed
    for tests and the admin endpoint."""

    def __init__(self, db_path: str = ":memory:"):
        self.db_path = db_path
        self._memory = db_path == ":memory:"
        self._lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self.executions = 0
        self.cancels = 0
        self._shared = sqlite3.connect(db_path, check_same_thread=False)
        self._shared.executescript(_META_TABLES)
        self._shared.commit()

    # -- connections ---------------------------------------------------------

    def _connect(self) -> tuple[sqlite3.Connection, bool]:
        """(connection, owned): owned connections are closed after use."""
        if self._memory:
            return self._shared, False
        return sqlite3.connect(self.db_path, check_same_thread=False), True

    def _run(self, fn):
        con, owned = self._connect()
        if not owned:
            with self._lock:
                return fn(con)
        try:
            return fn(con)
        finally:
            con.close()

    # -- execution -----------------------------------------------------------

    def begin_execute(self) -> "PendingExecution":
        """Open a cancellable execution context (used by the queue)."""
        con, owned = self._connect()
        return PendingExecution(self, con, owned)

    def execute(self, sql: str, params: tuple = ()) -> list[tuple]:
        """One-shot query without external cancellation."""
        pending = self.begin_execute()
        try:
            return pending.run(sql, params)
        finally:
            pending.close()

    def run_transaction(self, statements: list[tuple[str, tuple]]) -> None:
        """Apply write statements atomically (all or nothing)."""
        def op(con: sqlite3.Connection):
            try:
                for sql, params in statements:
                    con.execute(sql, params)
            except Exception:
                con.rollback()
                raise
            con.commit()
        self._run(op)

    def execute_ddl(self, script: str) -> None:
        def op(con: sqlite3.Connection):
            con.executescript(script)
            con.commit()
        self._run(op)

    def _count_execution(self) -> None:
        with self._counter_lock:
            self.executions += 1

    def _count_cancel(self) -> None:
        with self._counter_lock:
            self.cancels += 1

    # -- schema metadata -----------------------------------------------------

    def create_table(self, name: str, schema: list[tuple[str, ValueType]],
                     rows: list[tuple]) -> None:
        """Create/replace a table with untyped columns (BLOB affinity keeps
        stored values exactly as bound) and record its logical schema."""
        def op(con: sqlite3.Connection):
            con.execute(f"DROP TABLE IF EXISTS {_q(name)}")
            cols = ", ".join(_q(c) for c, _t in schema)
            con.execute(f"CREATE TABLE {_q(name)} ({cols})")
            con.execute("DELETE FROM _gb_schemas WHERE table_name = ?",
                        (name,))
            con.executemany(
                "INSERT INTO _gb_schemas VALUES (?, ?, ?, ?)",
                [(name, i, c, str(t)) for i, (c, t) in enumerate(schema)],
            )
            if rows:
                marks = ", ".join("?" * len(schema))
                con.executemany(
                    f"INSERT INTO {_q(name)} VALUES ({marks})", rows
                )
            con.execute(
                "INSERT INTO _gb_versions VALUES (?, 1) "
                "ON CONFLICT(table_name) DO UPDATE SET version = version + 1",
                (name,),
            )
            con.commit()
        self._run(op)

    def drop_table(self, name: str) -> None:
        def op(con: sqlite3.Connection):
            con.execute(f"DROP TABLE IF EXISTS {_q(name)}")
            con.execute("DELETE FROM _gb_schemas WHERE table_name = ?",
                        (name,))
            con.commit()
        self._run(op)

    def rename_table(self, old: str, new: str) -> None:
        """Atomic replace: drop target, rename, move metadata, bump."""
        def op(con: sqlite3.Connection):
            con.execute("BEGIN")
            con.execute(f"DROP TABLE IF EXISTS {_q(new)}")
            con.execute(f"ALTER TABLE {_q(old)} RENAME TO {_q(new)}")
            con.execute("DELETE FROM _gb_schemas WHERE table_name = ?",
                        (new,))
            con.execute(
                "UPDATE _gb_schemas SET table_name = ? WHERE table_name = ?",
                (new, old),
            )
            con.execute("DELETE FROM _gb_versions WHERE table_name = ?",
                        (old,))
            con.execute(
                "INSERT INTO _gb_versions VALUES (?, 1) "
                "ON CONFLICT(table_name) DO UPDATE SET version = version + 1",
                (new,),
            )
            con.commit()
        self._run(op)

    def bump_version(self, name: str) -> str:
        def op(con: sqlite3.Connection):
            con.execute(
                "INSERT INTO _gb_versions VALUES (?, 1) "
                "ON CONFLICT(table_name) DO UPDATE SET version = version + 1",
                (name,),
            )
            con.commit()
            row = con.execute(
                "SELECT version FROM _gb_versions WHERE table_name = ?",
                (name,),
            ).fetchone()
            return f"v{row[0]}"
        return self._run(op)

    def table_version(self, name: str) -> str:
        def op(con: sqlite3.Connection):
            row = con.execute(
                "SELECT version FROM _gb_versions WHERE table_name = ?",
                (name,),
            ).fetchone()
            return f"v{row[0]}" if row else "v0"
        return self._run(op)

    def table_schema(self, name: str
                     ) -> Optional[list[tuple[str, ValueType]]]:
        def op(con: sqlite3.Connection):
            rows = con.execute(
                "SELECT column_name, value_type FROM _gb_schemas "
                "WHERE table_name = ? ORDER BY position",
                (name,),
            ).fetchall()
            if rows:
                return [(c, ValueType(t)) for c, t in rows]
            info = con.execute(f"PRAGMA table_info({_q(name)})").fetchall()
            if not info:
                return None
            # externally created table: map declared affinity
            out = []
            for _cid, col, decl, *_rest in info:
                decl_up = (decl or "").upper()
                vtype = ValueType.TEXT
                for marker, t in _AFFINITY_TO_TYPE:
                    if marker in decl_up:
                        vtype = t
                        break
                out.append((col, vtype))
            return out
        return self._run(op)

    def list_tables(self) -> list[str]:
        def op(con: sqlite3.Connection):
            rows = con.execute(
                "SELECT name FROM sqlite_master WHERE type='table' "
                "AND name NOT LIKE '\\_gb\\_%' ESCAPE '\\' "
                "AND name NOT LIKE 'sqlite_%' ORDER BY name"
            ).fetchall()
            return [r[0] for r in rows]
        return self._run(op)

    # -- SchemaProvider / PlanProvider ---------------------------------------

    def source_schema(self, source: SourceSpec
                      ) -> Optional[list[tuple[str, ValueType]]]:
        if source.kind in ("warehouse-table", "csv-upload"):
            return self.table_schema(source.reference)
        return None

    def source_table(self, source: SourceSpec) -> tuple[str, str]:
        name = source.reference
        return (name, self.table_version(name))

    # -- documents -----------------------------------------------------------

    def save_document(self, doc_id: str, body: str) -> None:
        def op(con: sqlite3.Connection):
            con.execute(
                "INSERT INTO _gb_documents VALUES (?, ?) "
                "ON CONFLICT(doc_id) DO UPDATE SET body = excluded.body",
                (doc_id, body),
            )
            con.commit()
        self._run(op)

    def load_document(self, doc_id: str) -> Optional[str]:
        def op(con: sqlite3.Connection):
            row = con.execute(
                "SELECT body FROM _gb_documents WHERE doc_id = ?", (doc_id,)
            ).fetchone()
            return row[0] if row else None
        return self._run(op)

    # -- materialization schedules -------------------------------------------

    def save_materialization(self, element_id: str, cadence: float,
                             target_table: str, doc_id: str,
                             last_refresh: Optional[float]) -> None:
        def op(con: sqlite3.Connection):
            con.execute(
                "INSERT INTO _gb_materializations VALUES (?, ?, ?, ?, ?) "
                "ON CONFLICT(element_id) DO UPDATE SET "
                "cadence_seconds=excluded.cadence_seconds, "
                "target_table=excluded.target_table, "
                "doc_id=excluded.doc_id, last_refresh=excluded.last_refresh",
                (element_id, cadence, target_table, doc_id, last_refresh),
            )
            con.commit()
        self._run(op)

    def load_materializations(self) -> list[tuple[str, float, str, str,
                                                  Optional[float]]]:
        def op(con: sqlite3.Connection):
            return con.execute(
                "SELECT element_id, cadence_seconds, target_table, doc_id, "
                "last_refresh FROM _gb_materializations ORDER BY element_id"
            ).fetchall()
        return self._run(op)

    def close(self) -> None:
        self._shared.close()


class PendingExecution:
    """A single cancellable statement execution."""

    def __init__(self, driver: SqliteWarehouseDriver,
                 con: sqlite3.Connection, owned: bool):
        self._driver = driver
        self._con = con
        self._owned = owned
        self.handle = ExecutionHandle(con)

    def run(self, sql: str, params: tuple = ()) -> list[tuple]:
        self._driver._count_execution()
        if self._owned:
            return self._con.execute(sql, params).fetchall()
        with self._driver._lock:
            return self._con.execute(sql, params).fetchall()

    def cancel(self) -> None:
        self._driver._count_cancel()
        self.handle.cancel()

    def close(self) -> None:
        if self._owned:
            self._con.close()
