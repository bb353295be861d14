"""Resolution and lowering: effective keys, placement, plan determinism."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from conftest import document, grouped_sales_element, sales_warehouse, table_element
from gridbook import fuzz as fz
from gridbook.model import ColumnSpec, FilterSpec, LevelSpec
from gridbook.plan import stages as st
from gridbook.plan.lower import ExpansionState, lower_to_plan
from gridbook.plan.resolve import (
    ResolutionFailure,
    Resolver,
    effective_keys,
)


# -- effective keys ----------------------------------------------------------


def test_effective_keys_base_and_summary_empty():
    keys = effective_keys([[], ["a"], ["b"], []])
    assert keys[0] == [] and keys[-1] == []


def test_effective_keys_accumulate_coarsest_first():
    keys = effective_keys([[], ["a"], ["b", "c"], []])
    # level 1 is finer: it groups by its own keys plus level 2's
    assert keys[1] == ["b", "c", "a"]
    assert keys[2] == ["b", "c"]


@given(hst.lists(
    hst.lists(hst.sampled_from("abcdef"), max_size=3, unique=True),
    min_size=2, max_size=5,
))
@settings(max_examples=200, deadline=None)
def test_effective_keys_monotone(levels_keys):
    """Finer middle levels always group by a superset of coarser keys."""
    keys = effective_keys(levels_keys)
    for i in range(1, len(keys) - 2):
        assert set(keys[i]) >= set(keys[i + 1])
    assert keys[0] == [] and keys[-1] == []


# -- resolution --------------------------------------------------------------


def test_resolve_grouped_element(warehouse):
    doc = document(grouped_sales_element())
    table = Resolver(doc, warehouse).resolve_table("t1")
    assert [lv.own_keys for lv in table.levels] == [[], ["c1"], []]
    assert table.columns["c3"].resident_level == 1
    assert table.topo_order.index("c1") < table.topo_order.index("c3")


def test_resolve_rejects_aggregate_at_base(warehouse):
    el = table_element(columns=[
        ColumnSpec("c1", "Total", "Sum([amount])", resident_level=0),
    ])
    with pytest.raises(ResolutionFailure):
        Resolver(document(el), warehouse).resolve_table("t1")


def test_resolve_rejects_window_at_summary(warehouse):
    el = table_element(
        levels=[LevelSpec(), LevelSpec()],
        columns=[ColumnSpec("c1", "L", "Lag([amount])", resident_level=1)],
    )
    with pytest.raises(ResolutionFailure):
        Resolver(document(el), warehouse).resolve_table("t1")


def test_resolve_rejects_column_cycle(warehouse):
    el = table_element(columns=[
        ColumnSpec("c1", "A", "[B] + 1"),
        ColumnSpec("c2", "B", "[A] + 1"),
    ])
    with pytest.raises(ResolutionFailure):
        Resolver(document(el), warehouse).resolve_table("t1")


def test_defined_column_shadows_source_case_insensitively(warehouse):
    el = table_element(columns=[
        ColumnSpec("c1", "REGION", 'Concat([region], "!")'),
    ])
    doc = document(el)
    wh = sales_warehouse()
    plan = lower_to_plan(Resolver(doc, wh), wh, "t1")
    names = [n for n, _t in plan.schema]
    assert names.count("REGION") == 1
    assert "region" not in names


# -- lowering and plan shape -------------------------------------------------


def test_plan_determinism_same_document(warehouse):
    doc = document(grouped_sales_element())
    wh1, wh2 = sales_warehouse(), sales_warehouse()
    p1 = lower_to_plan(Resolver(doc, wh1), wh1, "t1")
    p2 = lower_to_plan(Resolver(doc, wh2), wh2, "t1")
    assert p1.canonical_text() == p2.canonical_text()
    assert p1.fingerprint() == p2.fingerprint()


@pytest.mark.parametrize("seed", range(25))
def test_plan_determinism_fuzzed(seed):
    fw = fz.build_workbook(seed)
    try:
        fingerprints = []
        for _ in range(2):
            resolver = Resolver(fw.doc, fw.warehouse)
            plan = lower_to_plan(resolver, fw.warehouse,
                                 fw.element_ids[0])
            fingerprints.append(plan.fingerprint())
        assert fingerprints[0] == fingerprints[1]
    finally:
        fw.warehouse.close()


def test_paging_excluded_from_unpaged_fingerprint(warehouse):
    doc = document(grouped_sales_element())
    resolver = Resolver(doc, warehouse)
    full = lower_to_plan(resolver, warehouse, "t1")
    paged = lower_to_plan(resolver, warehouse, "t1",
                          ExpansionState(limit=2, offset=1))
    assert full.fingerprint() != paged.fingerprint()
    assert full.unpaged_fingerprint() == paged.unpaged_fingerprint()


def test_collapse_changes_projection(warehouse):
    doc = document(grouped_sales_element())
    resolver = Resolver(doc, warehouse)
    base = lower_to_plan(resolver, warehouse, "t1")
    summary = lower_to_plan(resolver, warehouse, "t1",
                            ExpansionState(collapsed=[True, True, False]))
    assert base.fingerprint() != summary.fingerprint()
    names = [n for n, _t in summary.schema]
    assert names == ["Grand"]


def test_fully_collapsed_keyless_projection_keeps_ordinal(warehouse):
    # a fully collapsed view with no summary columns cannot project zero
    # columns (SQL has no zero-column SELECT): the ordinal stands in
    el = table_element(
        levels=[LevelSpec(), LevelSpec()],
        columns=[ColumnSpec("c1", "Amt", "[amount]")],
    )
    doc = document(el)
    wh = sales_warehouse()
    plan = lower_to_plan(Resolver(doc, wh), wh, "t1",
                         ExpansionState(collapsed=[True, False]))
    assert [n for n, _t in plan.schema] == [st.ORD]


def test_version_token_feeds_fingerprint(warehouse):
    doc = document(grouped_sales_element())

    class Bumped:
        def __init__(self, inner):
            self.inner = inner

        def source_schema(self, source):
            return self.inner.source_schema(source)

        def source_table(self, source):
            name, _v = self.inner.source_table(source)
            return (name, "v2")

    resolver = Resolver(doc, warehouse)
    p1 = lower_to_plan(resolver, warehouse, "t1")
    bumped = Bumped(warehouse)
    p2 = lower_to_plan(Resolver(doc, bumped), bumped, "t1")
    assert p1.fingerprint() != p2.fingerprint()


def test_greedy_filter_placement_stages(warehouse):
    """A base-column filter lands before grouping; an aggregate-level
    filter lands after that level's values are computed."""
    el = table_element(
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "Amount", "[amount]"),
            ColumnSpec("c3", "Total", "Sum([Amount])", resident_level=1),
        ],
        filters=[
            FilterSpec(target="c2", kind="range", low=2, high=None),
            FilterSpec(target="c3", kind="range", low=5, high=None),
        ],
    )
    doc = document(el)
    wh = sales_warehouse()
    plan = lower_to_plan(Resolver(doc, wh), wh, "t1")
    filter_positions = [i for i, s in enumerate(plan.stages)
                        if isinstance(s, st.Filter)]
    first_group = min(i for i, s in enumerate(plan.stages)
                      if isinstance(s, st.GroupBy))
    assert len(filter_positions) == 2
    assert filter_positions[0] < first_group < filter_positions[1]


def test_canonical_text_stable_across_processes():
    """The canonical text contains no addresses, ids, or dict-order
    artifacts (fingerprints must be stable across runs)."""
    fw = fz.build_workbook(3)
    try:
        resolver = Resolver(fw.doc, fw.warehouse)
        plan = lower_to_plan(resolver, fw.warehouse, fw.element_ids[0])
        text = plan.canonical_text()
        assert "0x" not in text
        assert "object at" not in text
    finally:
        fw.warehouse.close()
