"""SQL generation: shape, identifier safety, materialization substitution."""

from __future__ import annotations

import re

from conftest import (
    SALES_ROWS,
    SALES_SCHEMA,
    document,
    grouped_sales_element,
    sales_warehouse,
    table_element,
)
from gridbook.difftest import MemoryWarehouse, run_differential
from gridbook.model import ColumnSpec, LevelSpec
from gridbook.plan import stages as st
from gridbook.plan.lower import lower_to_plan
from gridbook.plan.resolve import Resolver
from gridbook.sqlgen import (
    Materialization,
    MaterializationRegistry,
    compile_plan,
    substitute_materializations,
)
from gridbook.values import ValueType


def lower(doc, eid, wh, state=None):
    return lower_to_plan(Resolver(doc, wh), wh, eid, state)


def test_compiled_sql_runs_and_matches_oracle():
    wh = sales_warehouse()
    plan = lower(document(grouped_sales_element()), "t1", wh)
    assert run_differential(plan, wh) is None
    wh.close()


def test_single_statement_with_ctes():
    wh = sales_warehouse()
    plan = lower(document(grouped_sales_element()), "t1", wh)
    sql = compile_plan(plan).text
    assert sql.startswith("WITH ")
    assert ";" not in sql
    wh.close()


def test_identifiers_always_quoted():
    """Column names with spaces, quotes, and keywords survive."""
    schema = [("select", ValueType.TEXT), ('a "b"', ValueType.NUMBER),
              ("with space", ValueType.NUMBER)]
    rows = [("x", 1.0, 2.0), ("y", 3.0, 4.0)]
    wh = MemoryWarehouse({"weird": (schema, rows)})
    el = table_element(
        source="weird",
        levels=[LevelSpec(), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Sel", "[select]"),
            ColumnSpec("c2", "Q", '[a "b"] + [with space]'),
        ],
    )
    plan = lower(document(el), "t1", wh)
    assert run_differential(plan, wh) is None
    wh.close()


def test_cte_prefix_avoids_scanned_table_names():
    """A source table named s1 (case-insensitive match with the default
    CTE names) must not capture a CTE reference."""
    wh = MemoryWarehouse({"S1": (SALES_SCHEMA, SALES_ROWS)})
    plan = lower(
        document(table_element(
            source="S1",
            levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
            columns=[
                ColumnSpec("c1", "Region", "[region]"),
                ColumnSpec("c2", "Total", "Sum([amount])",
                           resident_level=1),
            ],
        )), "t1", wh)
    sql = compile_plan(plan).text
    assert re.search(r"\bAS \(SELECT", sql)
    assert not re.search(r"\bs\d+ AS \(", sql)  # escaped prefix in use
    assert run_differential(plan, wh) is None
    wh.close()


def test_order_by_nulls_last():
    wh = sales_warehouse()
    plan = lower(document(grouped_sales_element()), "t1", wh)
    sql = compile_plan(plan).text
    assert "NULLS LAST" in sql
    rows = wh.execute(sql)
    region = [r[1] for r in rows]
    assert region[-1] is None  # Null key group sorts last
    wh.close()


def test_substitution_replaces_matching_subplan():
    wh = sales_warehouse()
    dim = table_element(
        "dim",
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "Total", "Sum([amount])", resident_level=1),
        ],
    )
    main = table_element(
        "main",
        levels=[LevelSpec(), LevelSpec()],
        columns=[
            ColumnSpec("c1", "R", "[region]"),
            ColumnSpec("c2", "T",
                       "Lookup([dim/Total], [R], [dim/Region])"),
        ],
    )
    doc = document(dim, main)
    plan = lower(doc, "main", wh)
    subscans = [s.source for s in plan.stages
                if isinstance(s, st.Scan)
                and isinstance(s.source, st.SubplanScan)]
    assert subscans, "expected a subplan scan for the dim element"
    sub = subscans[0]

    registry = MaterializationRegistry()
    registry.register(Materialization(
        element_id="dim", fingerprint=sub.fingerprint,
        table="mat_dim", version="v9",
    ))
    swapped = substitute_materializations(plan, registry)
    tables = {s.source.table for s in swapped.stages
              if isinstance(s, st.Scan) and isinstance(s.source, st.TableScan)}
    assert "mat_dim" in tables

    # materialize the dim output (ordinal excluded) and check equal results
    from gridbook.engine.evaluate import evaluate_plan

    dim_plan = lower(doc, "dim", wh)
    dim_table = evaluate_plan(dim_plan, wh)
    mat_schema = [(n, t) for n, t in dim_table.schema() if n != st.ORD]
    mat_rows = [
        tuple(dim_table.columns[n][i] for n, _t in mat_schema)
        for i in range(dim_table.nrows)
    ]
    wh.add_table("mat_dim", mat_schema, mat_rows)
    assert wh.execute(compile_plan(plan).text) == \
        wh.execute(compile_plan(swapped).text)
    wh.close()


def test_substitution_ignores_stale_fingerprint():
    wh = sales_warehouse()
    doc = document(grouped_sales_element())
    plan = lower(doc, "t1", wh)
    registry = MaterializationRegistry()
    registry.register(Materialization(
        element_id="t1", fingerprint="not-the-right-one",
        table="mat_t1", version="v1",
    ))
    assert substitute_materializations(plan, registry) is plan
    wh.close()
