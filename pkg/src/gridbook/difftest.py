"""Differential-testing support: in-memory warehouse + result comparison.

Used by the fuzz harness, the CLI and the test suite to run the same plan
through the reference evaluator and through compiled SQL on the embedded
engine, then compare cell for cell.
"""

from __future__ import annotations

import math
import sqlite3
from typing import Optional

from .engine import ColumnarTable, evaluate_plan
from .model import SourceSpec
from .plan import stages as st
from .values import ValueType


class MemoryWarehouse:
    """Schema provider + plan provider + source lookup over an in-memory
    SQLite database, for tests and fuzzing."""

    def __init__(self, tables: dict[str, tuple[list[tuple[str, ValueType]],
                                               list[tuple]]]):
        self.schemas = {name: schema for name, (schema, _r) in tables.items()}
        self.tables = {
            name: ColumnarTable.from_rows(schema, rows)
            for name, (schema, rows) in tables.items()
        }
        self.con = sqlite3.connect(":memory:")
        for name, (schema, rows) in tables.items():
            cols = ", ".join(_quote(c) for c, _t in schema)
            self.con.execute(f"CREATE TABLE {_quote(name)} ({cols})")
            if rows:
                marks = ", ".join("?" * len(schema))
                self.con.executemany(
                    f"INSERT INTO {_quote(name)} VALUES ({marks})", rows
                )

    def add_table(self, name: str, schema: list[tuple[str, ValueType]],
                  rows: list[tuple]) -> None:
        """Create or replace a table (used to materialize results)."""
        self.schemas[name] = schema
        self.tables[name] = ColumnarTable.from_rows(schema, rows)
        self.con.execute(f"DROP TABLE IF EXISTS {_quote(name)}")
        cols = ", ".join(_quote(c) for c, _t in schema)
        self.con.execute(f"CREATE TABLE {_quote(name)} ({cols})")
        if rows:
            marks = ", ".join("?" * len(schema))
            self.con.executemany(
                f"INSERT INTO {_quote(name)} VALUES ({marks})", rows
            )

    # SchemaProvider / PlanProvider
    def source_schema(self, source: SourceSpec):
        return self.schemas.get(source.reference)

    def source_table(self, source: SourceSpec) -> tuple[str, str]:
        return (source.reference, "v1")

    # SourceLookup
    def scan_table(self, scan: st.TableScan) -> ColumnarTable:
        return self.tables[scan.table]

    def execute(self, sql: str) -> list[tuple]:
        return self.con.execute(sql).fetchall()

    def close(self) -> None:
        self.con.close()


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def cells_equal(a, b, rel_tol: float = 1e-9) -> bool:
    """Exact for Null/text/integers; relative tolerance for non-integer
    numbers (SQL float arithmetic may associate differently)."""
    if a is None or b is None:
        return a is None and b is None
    na = isinstance(a, (int, float))
    nb = isinstance(b, (int, float))
    if na != nb:
        return False
    if na:
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=1e-12)
    return a == b


def compare_results(oracle: ColumnarTable, sql_rows: list[tuple]
                    ) -> Optional[str]:
    """None when equal, else a human-readable first difference."""
    want = oracle.rows()
    if len(want) != len(sql_rows):
        return f"row count: oracle {len(want)}, sql {len(sql_rows)}"
    width = len(oracle.names)
    for i, (wr, gr) in enumerate(zip(want, sql_rows)):
        if len(gr) != width:
            return f"row {i}: oracle {width} cells, sql {len(gr)}"
        for j in range(width):
            if not cells_equal(wr[j], gr[j]):
                return (
                    f"row {i} column {oracle.names[j]!r}: "
                    f"oracle {wr[j]!r}, sql {gr[j]!r}"
                )
    return None


def run_differential(plan: st.Plan, warehouse: MemoryWarehouse
                     ) -> Optional[str]:
    from .sqlgen import compile_plan

    oracle = evaluate_plan(plan, warehouse)
    sql = compile_plan(plan)
    try:
        rows = warehouse.execute(sql.text)
    except sqlite3.Error as exc:
        return f"SQL error: {exc}"
    return compare_results(oracle, rows)
