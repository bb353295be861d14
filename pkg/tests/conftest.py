"""Shared fixtures and document builders for the test suite."""

from __future__ import annotations

import pytest

from gridbook.difftest import MemoryWarehouse
from gridbook.model import (
    ColumnSpec,
    Element,
    LevelSpec,
    Page,
    SourceSpec,
    TableElementSpec,
    WorkbookDocument,
)
from gridbook.values import ValueType

SALES_SCHEMA = [
    ("region", ValueType.TEXT),
    ("product", ValueType.TEXT),
    ("amount", ValueType.NUMBER),
    ("sold_on", ValueType.DATE),
    ("returned", ValueType.LOGICAL),
]

SALES_ROWS = [
    ("east", "widget", 10.0, "2024-01-05 00:00:00.000000", 0),
    ("east", "gadget", 4.0, "2024-01-20 00:00:00.000000", 1),
    ("west", "widget", 7.5, "2024-02-02 00:00:00.000000", 0),
    ("west", "gadget", 2.0, "2024-02-11 00:00:00.000000", 0),
    ("east", "widget", 3.0, "2024-03-01 00:00:00.000000", 0),
    (None, "widget", 1.0, None, None),
]


def sales_warehouse() -> MemoryWarehouse:
    return MemoryWarehouse({"sales": (SALES_SCHEMA, SALES_ROWS)})


def table_element(element_id: str = "t1", *, source: str = "sales",
                  levels=None, columns=None, filters=None,
                  source_kind: str = "warehouse-table") -> Element:
    return Element(element_id, "table", TableElementSpec(
        source=SourceSpec(source_kind, source),
        levels=levels if levels is not None else [LevelSpec(), LevelSpec()],
        columns={c.column_id: c for c in (columns or [])},
        filters=list(filters or []),
    ))


def document(*elements: Element, doc_id: str = "doc") -> WorkbookDocument:
    return WorkbookDocument(doc_id, pages=[Page("p1", list(elements))])


def grouped_sales_element(element_id: str = "t1") -> Element:
    """Three levels: base, by region, summary."""
    return table_element(
        element_id,
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "Amount", "[amount]"),
            ColumnSpec("c3", "Total", "Sum([Amount])", resident_level=1),
            ColumnSpec("c4", "Grand", "Sum([Amount])", resident_level=2),
        ],
    )


@pytest.fixture()
def warehouse():
    wh = sales_warehouse()
    yield wh
    wh.close()
