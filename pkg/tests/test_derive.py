"""Local derivation: answering view changes from a cached result."""

from __future__ import annotations

from conftest import document, grouped_sales_element, sales_warehouse
from gridbook.engine.derive import derive_locally
from gridbook.engine.evaluate import evaluate_plan
from gridbook.plan.lower import ExpansionState, lower_to_plan
from gridbook.plan.resolve import Resolver


def setup():
    wh = sales_warehouse()
    doc = document(grouped_sales_element())
    resolver = Resolver(doc, wh)

    def plan(state=None):
        return lower_to_plan(resolver, wh, "t1", state)

    return wh, plan


def tables_equal(a, b) -> bool:
    return a.schema() == b.schema() and a.rows() == b.rows()


def test_identical_plan_returns_cache():
    wh, plan = setup()
    p = plan()
    cached = evaluate_plan(p, wh)
    assert derive_locally(p, cached, p) is cached
    wh.close()


def test_page_derives_from_unpaged_cache():
    wh, plan = setup()
    unpaged = plan(ExpansionState(with_ordinal=True))
    cached = evaluate_plan(unpaged, wh)
    paged = plan(ExpansionState(with_ordinal=True, limit=2, offset=1))
    derived = derive_locally(unpaged, cached, paged)
    assert derived is not None
    assert tables_equal(derived, evaluate_plan(paged, wh))
    wh.close()


def test_incomplete_cache_never_derives():
    wh, plan = setup()
    unpaged = plan(ExpansionState(with_ordinal=True))
    cached = evaluate_plan(unpaged, wh)
    paged = plan(ExpansionState(with_ordinal=True, limit=2))
    assert derive_locally(unpaged, cached, paged, complete=False) is None
    wh.close()


def test_unrelated_plan_does_not_derive():
    wh, plan = setup()
    other_doc = document(grouped_sales_element("t9"))
    wh2 = sales_warehouse()
    other = lower_to_plan(Resolver(other_doc, wh2), wh2, "t9",
                          ExpansionState(collapsed=[True, True, False]))
    cached_plan = plan()
    cached = evaluate_plan(cached_plan, wh)
    # different element id -> stage names differ -> no shared prefix
    result = derive_locally(cached_plan, cached, other)
    if result is not None:  # if it does fire, it must still be sound
        assert tables_equal(result, evaluate_plan(other, wh2))
    wh.close()
    wh2.close()


def test_derivation_soundness_on_resort():
    """A cached ordinal-bearing result can answer the same view re-sorted
    (the display sort differs but the computed prefix is shared)."""
    wh, plan = setup()
    base = plan(ExpansionState(with_ordinal=True))
    cached = evaluate_plan(base, wh)
    collapsed = plan(ExpansionState(collapsed=[True, False, False],
                                    with_ordinal=True))
    derived = derive_locally(base, cached, collapsed)
    if derived is not None:
        assert tables_equal(derived, evaluate_plan(collapsed, wh))
    wh.close()
