"""Acceptance gate: end-to-end criteria the engine must meet.

Each test here states one release criterion.  They are intentionally
heavier than the unit suites (large fuzz counts, 100k-row scenario runs,
concurrency) and together form the bar for calling the engine correct:
reference evaluation and compiled SQL must agree cell for cell, caching
must never serve stale or duplicated work, and local derivation must be
sound whenever it fires.
"""

from __future__ import annotations

import random
import threading
import time

import pytest
from fastapi.testclient import TestClient

from gridbook import fuzz as fz
from gridbook import scenarios as sc
from gridbook.cli import run_scenario
from gridbook.difftest import run_differential
from gridbook.engine.derive import derive_locally
from gridbook.engine.evaluate import evaluate_plan
from gridbook.model import (
    ColumnSpec,
    FilterSpec,
    LevelSpec,
    document_to_json,
)
from gridbook.plan import stages as st
from gridbook.plan.lower import ExpansionState, lower_to_plan
from gridbook.plan.resolve import Resolver
from gridbook.service import ServiceConfig
from gridbook.service.app import create_app
from gridbook.sqlgen import (
    Materialization,
    MaterializationRegistry,
    compile_plan,
    substitute_materializations,
)

from conftest import document, sales_warehouse, table_element


# ---------------------------------------------------------------------------
# (a) differential fuzzing: oracle == SQL on 1000 random workbooks


def test_differential_fuzz_1000_workbooks():
    """1000 randomly generated workbooks (multiple elements, all function
    classes, random view states) evaluate identically under the reference
    evaluator and the compiled SQL, within five minutes."""
    start = time.monotonic()
    failures = fz.fuzz_many(1000, base_seed=0)
    elapsed = time.monotonic() - start
    assert failures == []
    assert elapsed < 300, f"fuzz run took {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# (b) adding a Lookup/Rollup column never changes any level's row count


def _level_row_counts(fw, nlevels: int) -> list[int]:
    resolver = Resolver(fw.doc, fw.warehouse)
    counts = []
    for cut in range(nlevels):
        state = ExpansionState(collapsed=[i < cut for i in range(nlevels)])
        plan = lower_to_plan(resolver, fw.warehouse, "main", state)
        counts.append(evaluate_plan(plan, fw.warehouse).nrows)
    return counts


def _add_remote_column(fw, rng: random.Random) -> bool:
    """Append one Lookup/Rollup column against the dim element; True when a
    valid one was found."""
    body = fw.doc.find_element("main").body
    nlevels = len(body.levels)
    out = Resolver(fw.doc, fw.warehouse).output("dim")
    remote = ("dim", list(out.schema))
    table = Resolver(fw.doc, fw.warehouse).resolve_table("main")
    for _attempt in range(10):
        level = rng.randrange(nlevels)
        cols = [
            (c.column_id, table.columns[c.column_id].vtype, c.resident_level)
            for c in body.columns.values()
            if table.columns[c.column_id].vtype is not None
        ]
        ctx = fz._Ctx(rng, cols, level, nlevels,
                      allow_agg=False, allow_window=False, remote=remote)
        vtype = rng.choice([fz.NUMBER] * 2 + [fz.TEXT, fz.DATE])
        formula = fz._remote_expr(ctx, vtype)
        if formula is None:
            continue
        body.columns["ZX1"] = ColumnSpec("ZX1", "ZX1", formula,
                                         resident_level=level)
        if fz._valid(fw.doc, "main", fw.warehouse) is None:
            del body.columns["ZX1"]
            continue
        return True
    return False


def test_lookup_rollup_preserve_cardinality():
    """Cross-element enrichment is row-preserving: on 200 fuzzed documents,
    appending a Lookup or Rollup column leaves the row count of every
    grouping level exactly as it was."""
    checked = 0
    seed = 0
    while checked < 200:
        seed += 1
        assert seed < 2000, "fuzzer stopped producing two-element documents"
        fw = fz.build_workbook(seed, force_remote=True)
        try:
            if fw.doc.find_element("dim") is None:
                continue
            rng = random.Random(seed ^ 0xCA7D)
            nlevels = len(fw.doc.find_element("main").body.levels)
            before = _level_row_counts(fw, nlevels)
            if not _add_remote_column(fw, rng):
                continue
            after = _level_row_counts(fw, nlevels)
            assert after == before, f"seed {seed}: {before} -> {after}"
            checked += 1
        finally:
            fw.warehouse.close()


# ---------------------------------------------------------------------------
# (c)-(e) reference scenarios at scale


def test_scenario_cohort_100k():
    """Cohort retention over 100k rows: oracle == SQL, the quarter-zero
    active count equals the cohort population, all under a minute."""
    start = time.monotonic()
    result = run_scenario("cohort", 100_000, 7)
    elapsed = time.monotonic() - start
    assert result.ok, result.detail
    assert result.checked > 0
    assert elapsed < 60, f"cohort scenario took {elapsed:.0f}s"


@pytest.mark.parametrize("seed", random.Random(2026).sample(range(1000), 10))
def test_scenario_sessionize_100k(seed):
    """Gap-based sessionization over 100k rows matches an independent
    brute-force labeler exactly."""
    result = run_scenario("sessionize", 100_000, seed)
    assert result.ok, f"seed {seed}: {result.detail}"
    assert result.checked > 0


def test_scenario_augment_adhoc_edit():
    """An ad-hoc edit to an uploaded dimension table propagates through a
    downstream Lookup, and the pre-edit cache entry is not served."""
    result = run_scenario("augment", 100_000, 7)
    assert result.ok, result.detail


# ---------------------------------------------------------------------------
# (f) greedy filter placement


def test_filter_fuzz_100_workbooks():
    """100 fuzzed documents that carry at least one filter still evaluate
    identically under oracle and SQL, for the default and a random state."""
    checked = 0
    seed = 10_000
    while checked < 100:
        seed += 1
        assert seed < 12_000, "fuzzer stopped producing filtered documents"
        fw = fz.build_workbook(seed)
        try:
            if not fw.doc.find_element("main").body.filters:
                continue
            rng = random.Random(seed ^ 0xF117)
            resolver = Resolver(fw.doc, fw.warehouse)
            for state in (ExpansionState(),
                          fz.random_state(rng, fw.doc, "main")):
                plan = lower_to_plan(resolver, fw.warehouse, "main", state)
                err = run_differential(plan, fw.warehouse)
                assert err is None, f"seed {seed}: {err}"
            checked += 1
        finally:
            fw.warehouse.close()


def _filtered_sales(filters):
    wh = sales_warehouse()
    doc = document(table_element(
        "t1",
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "Amt", "[amount]"),
            ColumnSpec("c3", "Total", "Sum([Amt])", resident_level=1),
            ColumnSpec("c4", "Grand", "Sum([Amt])", resident_level=2),
        ],
        filters=filters,
    ))
    plan = lower_to_plan(Resolver(doc, wh), wh, "t1")
    assert run_differential(plan, wh) is None
    table = evaluate_plan(plan, wh)
    wh.close()
    rows = [dict(zip(table.names, r)) for r in table.rows()]
    return rows


def test_filter_placement_hand_cases():
    """A filter applies at the deepest level whose columns it references:
    base-row filters run before aggregation (and so change the
    aggregates), aggregate filters drop whole groups after their level's
    values are computed (leaving those values intact) while coarser
    aggregates see only the surviving rows."""
    # amounts: east 10+4+3, west 7.5+2, Null-region 1
    unfiltered = _filtered_sales([])
    assert {r["Region"]: r["Total"] for r in unfiltered} == \
        {"east": 17.0, "west": 9.5, None: 1.0}
    assert all(r["Grand"] == 27.5 for r in unfiltered)

    # base filter: rows with Amt <= 4 are gone before Sum runs
    base = _filtered_sales([FilterSpec(target=None, kind="expression",
                                       expression="[Amt] > 4")])
    assert {r["Region"]: r["Total"] for r in base} == \
        {"east": 10.0, "west": 7.5}
    assert all(r["Grand"] == 17.5 for r in base)

    # aggregate filter: groups are dropped after Total is computed, so the
    # surviving groups keep their full totals -- but the summary is built
    # from the surviving rows only
    agg = _filtered_sales([FilterSpec(target=None, kind="expression",
                                      expression="[Total] > 4")])
    assert {r["Region"]: r["Total"] for r in agg} == \
        {"east": 17.0, "west": 9.5}
    assert all(r["Grand"] == 26.5 for r in agg)


# ---------------------------------------------------------------------------
# (g) cache single-flight and materialization equivalence


SALES_SCHEMA_SVC = [("region", fz.TEXT), ("amount", fz.NUMBER)]
SALES_ROWS_SVC = [("east", 10), ("west", 5), ("east", 7), (None, 3)]


def _query_document():
    return document_to_json(document(table_element(
        "t1",
        levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
        columns=[
            ColumnSpec("c1", "Region", "[region]"),
            ColumnSpec("c2", "Total", "Sum([amount])", resident_level=1),
        ],
    )))


def test_64_concurrent_identical_queries_execute_once():
    """64 simultaneous identical query requests trigger exactly one
    warehouse execution; the other 63 join the in-flight entry and all get
    the same result."""
    app = create_app(ServiceConfig())
    service = app.state.service
    service.driver.create_table("sales", SALES_SCHEMA_SVC, SALES_ROWS_SVC)

    executions = []
    original = service.driver.begin_execute

    def counted():
        # page serving issues plain SELECTs against the stored result;
        # only the compiled query itself (a WITH statement) counts as an
        # execution
        pending = original()
        inner = pending.run

        def run(sql, params=()):
            if sql.startswith("WITH"):
                executions.append(sql)
            return inner(sql, params)

        pending.run = run
        return pending

    service.driver.begin_execute = counted
    body = {"document": _query_document(), "element_id": "t1"}
    responses = []
    barrier = threading.Barrier(64)

    with TestClient(app) as client:
        def fire():
            barrier.wait(10)
            responses.append(client.post("/v1/query", json=body))

        threads = [threading.Thread(target=fire) for _ in range(64)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    assert len(executions) == 1
    payloads = [r.json() for r in responses]
    assert all(r.status_code == 200 for r in responses)
    assert len({p["query_id"] for p in payloads}) == 1
    assert len({str(p["rows"]) for p in payloads}) == 1


def test_materialization_on_off_equivalence():
    """For 50 fuzzed documents whose main element reads another element,
    swapping the subplan for its materialized table changes the SQL but
    not one cell of the result."""
    checked = 0
    seed = 0
    while checked < 50:
        seed += 1
        assert seed < 1000, "fuzzer stopped producing dependent documents"
        fw = fz.build_workbook(seed, force_remote=True)
        try:
            plan = lower_to_plan(Resolver(fw.doc, fw.warehouse),
                                 fw.warehouse, "main")
            subs = {
                s.source.element_id: s.source
                for s in plan.stages
                if isinstance(s, st.Scan)
                and isinstance(s.source, st.SubplanScan)
            }
            if not subs:
                continue
            registry = MaterializationRegistry()
            for eid, sub in subs.items():
                out = evaluate_plan(sub.plan, fw.warehouse)
                schema = [(n, t) for n, t in out.schema() if n != st.ORD]
                rows = [
                    tuple(out.columns[n][i] for n, _t in schema)
                    for i in range(out.nrows)
                ]
                fw.warehouse.add_table(f"mat_{eid}", schema, rows)
                registry.register(Materialization(
                    eid, sub.fingerprint, f"mat_{eid}", "v1",
                ))
            swapped = substitute_materializations(plan, registry)
            assert swapped is not plan  # substitution actually engaged
            direct = fw.warehouse.execute(compile_plan(plan).text)
            via_mat = fw.warehouse.execute(compile_plan(swapped).text)
            assert direct == via_mat, f"seed {seed}"
            checked += 1
        finally:
            fw.warehouse.close()


# ---------------------------------------------------------------------------
# (h) local derivation soundness


def test_derive_locally_sound_over_300_pairs():
    """300 fuzzed (cached plan, new request) pairs: whenever local
    derivation fires its answer equals full evaluation, and it never fires
    when the cache is marked incomplete."""
    fired = 0
    for seed in range(300):
        fw = fz.build_workbook(seed)
        try:
            rng = random.Random(seed ^ 0xD1CE)
            resolver = Resolver(fw.doc, fw.warehouse)
            cached_plan = lower_to_plan(resolver, fw.warehouse, "main",
                                        ExpansionState(with_ordinal=True))
            cached = evaluate_plan(cached_plan, fw.warehouse)
            req_state = fz.random_state(rng, fw.doc, "main")
            req_state.with_ordinal = True
            requested = lower_to_plan(resolver, fw.warehouse, "main",
                                      req_state)

            assert derive_locally(cached_plan, cached, requested,
                                  complete=False) is None

            derived = derive_locally(cached_plan, cached, requested)
            if derived is None:
                continue
            fired += 1
            want = evaluate_plan(requested, fw.warehouse)
            assert derived.schema() == want.schema(), f"seed {seed}"
            assert derived.rows() == want.rows(), f"seed {seed}"
        finally:
            fw.warehouse.close()
    # the criterion is soundness-if-fired, but a derivation that never
    # fires would make this test vacuous
    assert fired >= 100, f"derivation fired only {fired} times"
