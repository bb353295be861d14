"""Reference evaluator and its kernels.

The compiled kernel extension must be bit-identical to the pure-Python
reference; when it is not built, the equivalence tests self-skip.
"""

from __future__ import annotations

import random

import pytest

from conftest import document, grouped_sales_element, sales_warehouse
from gridbook.engine.evaluate import evaluate_plan
from gridbook.engine.kernels import COMPILED, _fast_or_none, pure
from gridbook.model import ColumnSpec, LevelSpec
from conftest import table_element
from gridbook.plan.lower import ExpansionState, lower_to_plan
from gridbook.plan.resolve import Resolver

_fast = _fast_or_none()


def lower(doc, eid, wh, state=None):
    return lower_to_plan(Resolver(doc, wh), wh, eid, state)


# -- evaluator ---------------------------------------------------------------


def test_grouped_totals():
    wh = sales_warehouse()
    plan = lower(document(grouped_sales_element()), "t1", wh)
    table = evaluate_plan(plan, wh)
    rows = {(row[table.names.index("Region")],
             row[table.names.index("Total")]) for row in table.rows()}
    assert ("east", 17.0) in rows
    assert ("west", 9.5) in rows
    assert (None, 1.0) in rows  # Null region forms its own group


def test_summary_level():
    wh = sales_warehouse()
    plan = lower(document(grouped_sales_element()), "t1", wh,
                 ExpansionState(collapsed=[True, True, False]))
    table = evaluate_plan(plan, wh)
    assert table.nrows == 1
    assert table.columns["Grand"][0] == 27.5


def test_empty_source():
    from conftest import SALES_SCHEMA
    from gridbook.difftest import MemoryWarehouse

    wh = MemoryWarehouse({"sales": (SALES_SCHEMA, [])})
    plan = lower(document(grouped_sales_element()), "t1", wh)
    table = evaluate_plan(plan, wh)
    assert table.nrows == 0
    wh.close()


def test_attr_multivalue_marker():
    wh = sales_warehouse()
    el = table_element(
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "P", "Attr([product])", resident_level=1),
        ],
    )
    plan = lower(document(el), "t1", wh)
    table = evaluate_plan(plan, wh)
    values = dict(zip(table.columns["Region"], table.columns["P"]))
    assert values["east"] == "#MULTIVALUE"  # widget and gadget
    assert values[None] == "widget"         # single distinct value
    wh.close()


# -- kernel equivalence ------------------------------------------------------


def _random_column(rng: random.Random, n: int) -> list:
    pool = [None, 0, 1, -3, 2.5, "a", "b", "", "x y",
            "2024-01-01 00:00:00.000000"]
    return [rng.choice(pool) for _ in range(n)]


@pytest.mark.skipif(_fast is None, reason="compiled kernels not built")
@pytest.mark.parametrize("trial", range(40))
def test_kernels_identical(trial):
    rng = random.Random(trial)
    n = rng.randrange(0, 120)
    col1 = _random_column(rng, n)
    col2 = _random_column(rng, n)
    nums = [rng.choice([None, rng.randrange(-5, 6), rng.random(), "3x"])
            for _ in range(n)]
    indices = list(range(n))
    keys = [(col1, rng.random() < 0.5), (col2, rng.random() < 0.5)]

    assert pure.sort_indices(indices, keys) == \
        _fast.sort_indices(indices, keys)
    assert pure.group_rows([col1], indices) == \
        _fast.group_rows([col1], indices)
    assert pure.group_rows([col1, col2], indices) == \
        _fast.group_rows([col1, col2], indices)
    assert pure.fill_down(col1) == _fast.fill_down(col1)
    assert pure.running_sum(nums) == _fast.running_sum(nums)
    size = rng.randrange(1, 6)
    assert pure.moving_average(nums, size) == \
        _fast.moving_average(nums, size)


def test_compiled_flag_consistent():
    assert isinstance(COMPILED, bool)
    if COMPILED:
        assert _fast is not None


# -- kernel unit behavior ----------------------------------------------------


def test_sort_stable_and_nulls_last():
    col = [3, None, 1, 2, None, 1]
    order = pure.sort_indices(list(range(len(col))), [(col, False)])
    values = [col[i] for i in order]
    assert values == [1, 1, 2, 3, None, None]
    assert order[:2] == [2, 5]  # ties keep input order (stability)


def test_fill_down():
    assert pure.fill_down([None, 1, None, None, 2, None]) == \
        [None, 1, 1, 1, 2, 2]


def test_running_sum_coerces_text():
    # text coerces through numeric affinity, like SQL SUM
    assert pure.running_sum([1, "3x", None, 2.0]) == [1, 4, 4, 6.0]


def test_moving_average_window():
    out = pure.moving_average([2.0, 4.0, 6.0], 2)
    assert out == [2.0, 3.0, 5.0]
