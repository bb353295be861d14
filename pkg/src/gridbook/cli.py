"""Command-line front end: compile, run, fuzz, scenarios, and serving.

Exit codes: 0 success, 1 user error (bad input, unresolvable document),
2 differential failure (oracle and SQL disagree, or a scenario's
independent check fails).
"""

from __future__ import annotations

import json
import pathlib
import sys
from typing import Optional

import click

from . import scenarios as sc
from .difftest import MemoryWarehouse, compare_results
from .engine.evaluate import evaluate_plan
from .engine.table import ColumnarTable, write_csv
from .ingest import CsvFormatError, parse_csv
from .model import (
    DocumentDecodeError,
    document_from_json,
    document_to_json,
    validate_document,
)
from .plan.lower import PlanningError, lower_to_plan
from .plan.resolve import ResolutionFailure, Resolver
from .sqlgen import compile_plan
from .values import ValueType


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_document(path: str):
    try:
        body = json.loads(pathlib.Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read document {path}: {exc}")
    try:
        doc = document_from_json(body)
    except DocumentDecodeError as exc:
        _fail(f"document decode failed: {exc}")
    issues = [i for i in validate_document(doc) if i.severity == "error"]
    if issues:
        for issue in issues:
            click.echo(f"error: {issue.path}: {issue.message}", err=True)
        sys.exit(1)
    return doc


def _warehouse(sources: tuple[str, ...]) -> MemoryWarehouse:
    """Build an in-memory warehouse from ``name=path.csv`` arguments."""
    tables = {}
    for spec in sources:
        name, sep, path = spec.partition("=")
        if not sep or not name:
            _fail(f"--source expects name=path.csv, got {spec!r}")
        try:
            schema, rows = parse_csv(pathlib.Path(path).read_text("utf-8-sig"))
        except OSError as exc:
            _fail(f"cannot read {path}: {exc}")
        except CsvFormatError as exc:
            _fail(f"{path}: {exc}")
        tables[name] = (schema, rows)
    return MemoryWarehouse(tables)


def _lower(doc, element_id: str, warehouse):
    try:
        resolver = Resolver(doc, warehouse)
        return lower_to_plan(resolver, warehouse, element_id)
    except (ResolutionFailure, PlanningError) as exc:
        _fail(f"element does not resolve: {exc}")


@click.group()
def main() -> None:
    """Workbook analysis engine."""


@main.command("compile")
@click.argument("document", type=click.Path())
@click.argument("element_id")
@click.option("--source", "sources", multiple=True,
              help="name=path.csv source table (repeatable)")
@click.option("--plan", "show_plan", is_flag=True,
              help="print the canonical plan instead of SQL")
def cmd_compile(document: str, element_id: str,
                sources: tuple[str, ...], show_plan: bool) -> None:
    """Compile one element of a workbook document to SQL."""
    doc = _load_document(document)
    warehouse = _warehouse(sources)
    plan = _lower(doc, element_id, warehouse)
    if show_plan:
        click.echo(plan.canonical_text())
    else:
        sql = compile_plan(plan)
        click.echo(sql.text)
        click.echo(f"-- query_id: {plan.fingerprint()}")


@main.command("run")
@click.argument("document", type=click.Path())
@click.argument("element_id")
@click.option("--source", "sources", multiple=True,
              help="name=path.csv source table (repeatable)")
@click.option("--mode", type=click.Choice(["oracle", "sql", "both"]),
              default="both", show_default=True,
              help="evaluation path; 'both' also cross-checks them")
def cmd_run(document: str, element_id: str, sources: tuple[str, ...],
            mode: str) -> None:
    """Evaluate one element and print its result as CSV."""
    doc = _load_document(document)
    warehouse = _warehouse(sources)
    plan = _lower(doc, element_id, warehouse)
    oracle: Optional[ColumnarTable] = None
    if mode in ("oracle", "both"):
        oracle = evaluate_plan(plan, warehouse)
    if mode in ("sql", "both"):
        sql = compile_plan(plan)
        try:
            sql_rows = warehouse.execute(sql.text)
        except Exception as exc:  # noqa: BLE001 - report, don't trace
            _fail(f"SQL execution failed: {exc}")
        if oracle is None:
            table = ColumnarTable.from_rows(plan.schema, sql_rows)
            click.echo(write_csv(table), nl=False)
            return
        diff = compare_results(oracle, sql_rows)
        if diff is not None:
            click.echo(write_csv(oracle), nl=False)
            click.echo(f"differential failure: {diff}", err=True)
            sys.exit(2)
    click.echo(write_csv(oracle), nl=False)


@main.command("fuzz")
@click.option("--count", default=1000, show_default=True)
@click.option("--base-seed", default=0, show_default=True)
@click.option("--out", default="testdata/regressions", show_default=True,
              help="directory for failing-case reports")
@click.option("--inject-bug", is_flag=True, hidden=True,
              help="deliberately corrupt the oracle (harness sanity check)")
def cmd_fuzz(count: int, base_seed: int, out: str,
             inject_bug: bool) -> None:
    """Differentially fuzz random workbooks against the SQL engine."""
    from . import fuzz as fz

    if inject_bug:
        from .engine import kernels

        original = kernels.running_sum
        kernels.running_sum = lambda vals: [
            (v + 1 if isinstance(v, (int, float)) else v)
            for v in original(vals)
        ]
        try:
            failures = fz.fuzz_many(count, base_seed=base_seed)
        finally:
            kernels.running_sum = original
    else:
        failures = fz.fuzz_many(count, base_seed=base_seed)
    if not failures:
        click.echo(f"fuzz: {count} workbooks, 0 failures")
        return
    out_dir = pathlib.Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for message in failures:
        # messages start "seed N ..." -- N is the replay seed
        seed = message.split()[1].rstrip(":")
        report = out_dir / f"seed_{seed}.txt"
        report.write_text(
            f"replay: gridbook fuzz --count 1 --base-seed {seed}\n\n"
            f"{message}\n"
        )
    click.echo(
        f"fuzz: {count} workbooks, {len(failures)} failures "
        f"(reports in {out_dir})",
        err=True,
    )
    sys.exit(2)


@main.command("scenario")
@click.argument("name", type=click.Choice(sc.SCENARIO_NAMES))
@click.option("--rows", default=100_000, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--gap-days", default=30, show_default=True,
              help="inactivity gap that separates sessions (sessionize)")
def cmd_scenario(name: str, rows: int, seed: int, gap_days: int) -> None:
    """Generate synthetic flights and run a reference scenario."""
    result = run_scenario(name, rows, seed, gap_days)
    click.echo(f"{result.name}: {result.rows} rows, "
               f"{result.checked} checked groups -> {result.detail}")
    if not result.ok:
        sys.exit(2)


def run_scenario(name: str, rows: int, seed: int,
                 gap_days: int = 30) -> sc.ScenarioResult:
    flights = sc.generate_flights(rows, seed)
    if name == "cohort":
        warehouse = MemoryWarehouse({"flights": (sc.FLIGHT_SCHEMA, flights)})
        doc = sc.cohort_document()
        plan = _lower(doc, "cohorts", warehouse)
        diff = _differential(plan, warehouse)
        if diff:
            return sc.ScenarioResult(name, rows, 0, False, diff)
        table = evaluate_plan(plan, warehouse)
        expected = sc.brute_force_cohorts(flights)
        got = {}
        for row in _dicts(table):
            got[(row["CohortQuarter"], row["Quarter"])] = (
                int(row["ActiveTails"]), int(row["Population"])
            )
        if got != expected:
            return sc.ScenarioResult(
                name, rows, len(expected), False,
                "cohort counts diverge from brute force",
            )
        off = [k for k, v in got.items() if k[0] == k[1] and v[0] != v[1]]
        if off:
            return sc.ScenarioResult(
                name, rows, len(got), False,
                f"quarter-0 active != population for {off[0]}",
            )
        return sc.ScenarioResult(name, rows, len(got), True,
                                 "oracle == SQL == brute force")
    if name == "sessionize":
        warehouse = MemoryWarehouse({"flights": (sc.FLIGHT_SCHEMA, flights)})
        doc = sc.sessionize_document(gap_days)
        plan = _lower(doc, "session_stats", warehouse)
        diff = _differential(plan, warehouse)
        if diff:
            return sc.ScenarioResult(name, rows, 0, False, diff)
        table = evaluate_plan(plan, warehouse)
        expected = sc.brute_force_sessions(flights, gap_days)
        got = {
            (row["Plane"], row["Session"]): int(row["Flights"])
            for row in _dicts(table)
        }
        ok = got == expected
        return sc.ScenarioResult(
            name, rows, len(expected), ok,
            "sessions match brute-force labeler" if ok
            else "session labels diverge from brute force",
        )
    # augment: enrich flights from an editable dimension table, fix a
    # misspelling through an ad-hoc edit, and watch it propagate
    from .service import GridbookService, ServiceConfig

    service = GridbookService(ServiceConfig())
    try:
        service.driver.create_table("flights", sc.FLIGHT_SCHEMA, flights)
        service.driver.create_table("carrier_names", sc.CARRIER_DIM_SCHEMA,
                                    sc.CARRIER_DIM_ROWS)
        doc_json = document_to_json(sc.augment_document())
        before = service.handle_query(doc_json, "enriched")
        names = _column(before, "CarrierName")
        if "Southwst Airlines" not in names:
            return sc.ScenarioResult(name, rows, len(names), False,
                                     "expected misspelling not present")
        executions = service.driver.executions
        service.apply_adhoc_edits(
            "carrier_names",
            [{"row": 4, "column": "name", "value": "Southwest Airlines"}],
        )
        after = service.handle_query(doc_json, "enriched")
        fixed = _column(after, "CarrierName")
        if after.from_cache or service.driver.executions <= executions:
            return sc.ScenarioResult(name, rows, len(fixed), False,
                                     "stale cache entry was served")
        ok = ("Southwest Airlines" in fixed
              and "Southwst Airlines" not in fixed)
        return sc.ScenarioResult(
            name, rows, len(fixed), ok,
            "ad-hoc edit propagated through Lookup" if ok
            else "corrected value missing downstream",
        )
    finally:
        service.close()


def _differential(plan, warehouse) -> Optional[str]:
    from .difftest import run_differential

    return run_differential(plan, warehouse)


def _dicts(table: ColumnarTable):
    names = table.names
    for i in range(table.nrows):
        yield {n: table.columns[n][i] for n in names}


def _column(result, name: str) -> set:
    index = [c for c, _t in result.schema].index(name)
    return {row[index] for row in result.rows}


@main.command("serve")
@click.option("--db-path", default=":memory:", show_default=True)
@click.option("--max-parallel", default=4, show_default=True)
@click.option("--cache-capacity", default=256, show_default=True)
@click.option("--listen", default="127.0.0.1:8087", show_default=True)
@click.option("--auth-token", default=None)
def cmd_serve(db_path: str, max_parallel: int, cache_capacity: int,
              listen: str, auth_token: Optional[str]) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import ServiceConfig
    from .service.app import create_app

    host, sep, port_text = listen.rpartition(":")
    if not sep:
        _fail(f"--listen expects host:port, got {listen!r}")
    try:
        port = int(port_text)
    except ValueError:
        _fail(f"invalid port {port_text!r}")
    app = create_app(ServiceConfig(
        db_path=db_path,
        max_parallel=max_parallel,
        cache_capacity=cache_capacity,
        auth_token=auth_token,
    ))
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
