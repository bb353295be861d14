"""Service core: the query pipeline and workbook operations, HTTP-free.

Pipeline for a query: decode -> validate -> resolve -> lower (unpaged) ->
substitute materializations -> compile -> cache lookup (single-flight) ->
on miss, execute through the workload queue and store the full result as
a warehouse table -> serve the requested page from that table.

Executing the *unpaged* plan and paging from the stored result realizes
result reuse across scrolling: every page of the same view shares one
query id and one execution.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from ..cache import (
    ExecutionFailed,
    Hit,
    Join,
    MaterializationSpec,
    QueryDirectory,
    Ticket,
)
from ..model import (
    ControlSpec,
    SourceSpec,
    WorkbookDocument,
    DocumentDecodeError,
    decode_document,
    document_from_json,
    encode_document,
    validate_document,
)
from ..plan.lower import (
    ExpansionState,
    PlanningError,
    lower_output_plan,
    lower_to_plan,
)
from ..plan.resolve import ResolutionFailure, Resolver
from ..sqlgen import (
    Materialization,
    MaterializationRegistry,
    compile_plan,
    substitute_materializations,
)
from ..values import ValueType, json_to_storage, storage_to_json
from ..ingest import CsvFormatError, parse_csv, safe_table_name
from .driver import SqliteWarehouseDriver
from .queue import Superseded, WorkloadQueue


class ServiceError(Exception):
    def __init__(self, status: int, message: str,
                 details: Optional[list] = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.details = details or []


@dataclass
class QueryResult:
    query_id: str
    schema: list[tuple[str, str]]  # (name, value type)
    rows: list[list[Any]]
    total_rows: int
    complete: bool  # this response carries the entire result
    from_cache: bool


@dataclass
class ServiceConfig:
    db_path: str = ":memory:"
    max_parallel: int = 4
    cache_capacity: int = 256
    auth_token: Optional[str] = None


class GridbookService:
    def __init__(self, config: Optional[ServiceConfig] = None):
        self.config = config or ServiceConfig()
        self.driver = SqliteWarehouseDriver(self.config.db_path)
        self.queue = WorkloadQueue(self.config.max_parallel)
        self.directory = QueryDirectory(
            capacity=self.config.cache_capacity,
            drop_table=self.driver.drop_table,
        )
        self.registry = MaterializationRegistry()
        self._mat_lock = threading.Lock()
        self._mat_specs: dict[str, tuple[MaterializationSpec, str]] = {}
        self._upload_seq = 0
        self._load_materializations()

    def close(self) -> None:
        self.driver.close()

    # -- auth ----------------------------------------------------------------

    def check_token(self, token: Optional[str]) -> None:
        want = self.config.auth_token
        if want and token != want:
            raise ServiceError(401, "invalid or missing auth token")

    # -- documents -----------------------------------------------------------

    def save_document(self, doc_json: dict) -> str:
        doc = self._decode(doc_json)
        self.driver.save_document(doc.doc_id,
                                  encode_document(doc).decode())
        return doc.doc_id

    def load_document(self, doc_id: str) -> dict:
        body = self.driver.load_document(doc_id)
        if body is None:
            raise ServiceError(404, f"no document {doc_id!r}")
        return json.loads(body)

    def _decode(self, doc_json: dict) -> WorkbookDocument:
        try:
            doc = document_from_json(doc_json)
        except DocumentDecodeError as exc:
            raise ServiceError(400, f"document decode failed: {exc}")
        issues = [i for i in validate_document(doc) if i.severity == "error"]
        if issues:
            raise ServiceError(
                400, "document validation failed",
                [{"path": i.path, "message": i.message} for i in issues],
            )
        return doc

    # -- query pipeline ------------------------------------------------------

    def handle_query(self, doc_json: dict, element_id: str,
                     expansion: Optional[dict] = None,
                     controls: Optional[dict[str, Any]] = None,
                     session_id: str = "anonymous") -> QueryResult:
        doc = self._decode(doc_json)
        self._apply_controls(doc, controls or {})
        state = _expansion_from_json(expansion or {})
        limit, offset = state.limit, state.offset
        unpaged = ExpansionState(collapsed=state.collapsed, limit=None,
                                 offset=0,
                                 with_ordinal=state.with_ordinal)
        try:
            resolver = Resolver(doc, self.driver)
            plan = lower_to_plan(resolver, self.driver, element_id, unpaged)
        except (ResolutionFailure, PlanningError) as exc:
            raise ServiceError(400, f"element does not resolve: {exc}")
        plan = substitute_materializations(plan, self.registry)
        query_id = plan.fingerprint()

        outcome = self.directory.lookup_or_register(query_id, query_id)
        from_cache = True
        if isinstance(outcome, Ticket):
            from_cache = False
            table_ref = self._execute_to_table(
                outcome, plan, (session_id, element_id)
            )
        elif isinstance(outcome, Join):
            try:
                table_ref = outcome.wait(timeout=120).result_table_ref
            except ExecutionFailed as exc:
                raise ServiceError(502, f"warehouse execution failed: {exc}")
        else:
            table_ref = outcome.result_table_ref
        return self._serve_page(query_id, table_ref, plan.schema, limit,
                                offset, from_cache)

    def _execute_to_table(self, ticket: Ticket, plan, queue_key
                          ) -> str:
        sql = compile_plan(plan)
        table_ref = f"r_{ticket.query_id[:16]}"
        pending = self.driver.begin_execute()
        try:
            rows = self.queue.run(
                queue_key,
                lambda: pending.run(sql.text),
                cancel=pending.cancel,
            )
        except Superseded:
            ticket.fail("superseded")
            raise ServiceError(
                409, "request superseded by a newer one for this element"
            )
        except Exception as exc:  # noqa: BLE001 - warehouse errors -> 502
            ticket.fail(str(exc))
            raise ServiceError(502, f"warehouse execution failed: {exc}")
        finally:
            pending.close()
        self.driver.create_table(table_ref, plan.schema, rows)
        ticket.complete(table_ref, True)
        return table_ref

    def _serve_page(self, query_id: str, table_ref: str,
                    schema: list[tuple[str, ValueType]],
                    limit: Optional[int], offset: int,
                    from_cache: bool) -> QueryResult:
        total = self.driver.execute(
            f'SELECT count(*) FROM "{table_ref}"'
        )[0][0]
        cols = ", ".join(f'"{n}"' for n, _t in schema)
        page_sql = f'SELECT {cols} FROM "{table_ref}" ORDER BY rowid'
        if limit is not None:
            page_sql += f" LIMIT {int(limit)} OFFSET {int(offset)}"
        elif offset:
            page_sql += f" LIMIT -1 OFFSET {int(offset)}"
        raw = self.driver.execute(page_sql)
        rows = [
            [storage_to_json(v, t) for v, (_n, t) in zip(row, schema)]
            for row in raw
        ]
        complete = offset == 0 and (limit is None or len(rows) == total)
        return QueryResult(
            query_id=query_id,
            schema=[(n, str(t)) for n, t in schema],
            rows=rows,
            total_rows=total,
            complete=complete,
            from_cache=from_cache,
        )

    def fetch_results(self, query_id: str, limit: Optional[int] = None,
                      offset: int = 0) -> QueryResult:
        hit = self.directory.lookup_or_register(query_id)
        if isinstance(hit, Join):
            try:
                hit = hit.wait(timeout=120)
            except ExecutionFailed as exc:
                raise ServiceError(502, f"warehouse execution failed: {exc}")
        elif isinstance(hit, Ticket):
            hit.fail("results fetch for unknown query id")
            raise ServiceError(404, f"no results for query id {query_id!r}")
        schema = self.driver.table_schema(hit.result_table_ref)
        if schema is None:
            raise ServiceError(404, f"result table for {query_id!r} is gone")
        return self._serve_page(query_id, hit.result_table_ref, schema,
                                limit, offset, True)

    def compile_only(self, doc_json: dict, element_id: str,
                     expansion: Optional[dict] = None,
                     controls: Optional[dict[str, Any]] = None) -> dict:
        doc = self._decode(doc_json)
        self._apply_controls(doc, controls or {})
        state = _expansion_from_json(expansion or {})
        try:
            resolver = Resolver(doc, self.driver)
            plan = lower_to_plan(resolver, self.driver, element_id, state)
        except (ResolutionFailure, PlanningError) as exc:
            raise ServiceError(400, f"element does not resolve: {exc}")
        plan = substitute_materializations(plan, self.registry)
        sql = compile_plan(plan)
        return {"sql": sql.text, "query_id": sql.query_id,
                "plan": plan.canonical_text()}

    def _apply_controls(self, doc: WorkbookDocument,
                        controls: dict[str, Any]) -> None:
        if not controls:
            return
        remaining = dict(controls)
        for el in doc.iter_elements():
            if el.kind != "control":
                continue
            body = el.body
            assert isinstance(body, ControlSpec)
            if body.name in remaining:
                value = remaining.pop(body.name)
                try:
                    body.current_value = json_to_storage(value,
                                                         body.value_type)
                except (TypeError, ValueError) as exc:
                    raise ServiceError(
                        400, f"bad value for control {body.name!r}: {exc}"
                    )
        if remaining:
            raise ServiceError(
                400, f"unknown controls: {sorted(remaining)}"
            )

    # -- CSV ingestion -------------------------------------------------------

    def ingest_csv(self, data: bytes, name: str) -> dict:
        try:
            text = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ServiceError(400, f"CSV is not valid UTF-8: {exc}")
        try:
            schema, stored = parse_csv(text)
        except CsvFormatError as exc:
            raise ServiceError(400, str(exc))
        self._upload_seq += 1
        table = safe_table_name(name) or f"upload_{self._upload_seq}"
        self.driver.create_table(table, schema, stored)
        return {
            "source": {"kind": "warehouse-table", "reference": table},
            "schema": [(n, str(t)) for n, t in schema],
            "row_count": len(stored),
        }

    # -- ad-hoc edits --------------------------------------------------------

    def apply_adhoc_edits(self, table_ref: str,
                          edits: list[dict]) -> dict:
        schema = self.driver.table_schema(table_ref)
        if schema is None:
            raise ServiceError(404, f"no table {table_ref!r}")
        if not edits:
            return {"table": table_ref,
                    "version": self.driver.table_version(table_ref)}
        types = dict(schema)
        prepared = []
        for i, edit in enumerate(edits):
            try:
                row = int(edit["row"])
                column = edit["column"]
                value = edit.get("value")
            except (KeyError, TypeError, ValueError):
                raise ServiceError(
                    400, f"edit {i}: expected {{row, column, value}}"
                )
            if column not in types:
                raise ServiceError(400, f"edit {i}: no column {column!r}")
            try:
                stored = json_to_storage(value, types[column])
            except (TypeError, ValueError) as exc:
                raise ServiceError(
                    400,
                    f"edit {i}: value does not fit "
                    f"{types[column]}: {exc}",
                )
            prepared.append((row, column, stored))
        total = self.driver.execute(
            f'SELECT count(*) FROM "{table_ref}"'
        )[0][0]
        for i, (row, _c, _v) in enumerate(prepared):
            if not 1 <= row <= total:
                raise ServiceError(
                    400, f"edit {i}: row {row} out of range 1..{total}"
                )
        self.driver.run_transaction([
            (
                f'UPDATE "{table_ref}" SET "{column}" = ? WHERE rowid = ('
                f'SELECT rowid FROM "{table_ref}" ORDER BY rowid '
                f"LIMIT 1 OFFSET {row - 1})",
                (stored,),
            )
            for row, column, stored in prepared
        ])
        version = self.driver.bump_version(table_ref)
        return {"table": table_ref, "version": version}

    # -- materialization -----------------------------------------------------

    def schedule_materialization(self, element_id: str, doc_id: str,
                                 cadence_seconds: float) -> dict:
        if self.driver.load_document(doc_id) is None:
            raise ServiceError(404, f"no document {doc_id!r}")
        try:
            spec = MaterializationSpec(
                element_id=element_id,
                cadence_seconds=cadence_seconds,
                target_table=f"mat_{safe_table_name(element_id)}",
            )
        except ValueError as exc:
            raise ServiceError(400, str(exc))
        with self._mat_lock:
            self._mat_specs[element_id] = (spec, doc_id)
        self.refresh_materialization(element_id)
        return self.materialization_status(element_id)

    def refresh_materialization(self, element_id: str,
                                now: Optional[float] = None) -> None:
        """Execute the element's output into its target table; on any
        failure the previous materialization stays in place."""
        with self._mat_lock:
            if element_id not in self._mat_specs:
                raise ServiceError(404, f"no materialization {element_id!r}")
            spec, doc_id = self._mat_specs[element_id]
        doc = self._decode(self.load_document(doc_id))
        try:
            resolver = Resolver(doc, self.driver)
            plan = lower_output_plan(resolver, self.driver, element_id)
        except (ResolutionFailure, PlanningError) as exc:
            raise ServiceError(400, f"element does not compile: {exc}")
        plan = substitute_materializations(plan, self.registry)
        sql = compile_plan(plan)
        try:
            rows = self.driver.execute(sql.text)
        except Exception as exc:  # noqa: BLE001
            raise ServiceError(502, f"materialization failed: {exc}")
        keep = [i for i, (n, _t) in enumerate(plan.schema) if n != "_ord"]
        schema = [plan.schema[i] for i in keep]
        stored = [tuple(row[i] for i in keep) for row in rows]
        tmp = spec.target_table + "__new"
        self.driver.create_table(tmp, schema, stored)
        self.driver.rename_table(tmp, spec.target_table)
        self.registry.register(Materialization(
            element_id=element_id,
            fingerprint=plan.fingerprint(),
            table=spec.target_table,
            version=self.driver.table_version(spec.target_table),
        ))
        spec.last_refresh = now if now is not None else time.time()
        self.driver.save_materialization(
            element_id, spec.cadence_seconds, spec.target_table, doc_id,
            spec.last_refresh,
        )

    def refresh_due_materializations(self,
                                     now: Optional[float] = None) -> int:
        now = now if now is not None else time.time()
        with self._mat_lock:
            due = [eid for eid, (spec, _d) in self._mat_specs.items()
                   if spec.due(now)]
        count = 0
        for eid in due:
            try:
                self.refresh_materialization(eid, now)
                count += 1
            except ServiceError:
                continue  # prior materialization stays; retried next tick
        return count

    def materialization_status(self, element_id: str) -> dict:
        with self._mat_lock:
            if element_id not in self._mat_specs:
                raise ServiceError(404, f"no materialization {element_id!r}")
            spec, doc_id = self._mat_specs[element_id]
        mat = self.registry.get(element_id)
        return {
            "element_id": element_id,
            "doc_id": doc_id,
            "cadence_seconds": spec.cadence_seconds,
            "target_table": spec.target_table,
            "last_refresh": spec.last_refresh,
            "fingerprint": mat.fingerprint if mat else None,
        }

    def _load_materializations(self) -> None:
        for eid, cadence, target, doc_id, last in \
                self.driver.load_materializations():
            spec = MaterializationSpec(eid, cadence, target, last)
            with self._mat_lock:
                self._mat_specs[eid] = (spec, doc_id)

    # -- admin ---------------------------------------------------------------

    def cache_listing(self) -> dict:
        entries = [
            {
                "query_id": e.query_id,
                "state": e.state,
                "result_table_ref": e.result_table_ref,
                "complete": e.complete_flag,
                "waiters": e.waiters,
            }
            for e in self.directory.entries()
        ]
        with self._mat_lock:
            mats = sorted(self._mat_specs)
        return {
            "entries": entries,
            "capacity": self.directory.capacity,
            "executions": self.driver.executions,
            "cancels": self.driver.cancels,
            "materializations": mats,
        }


# ---------------------------------------------------------------------------


def _expansion_from_json(obj: dict) -> ExpansionState:
    if not isinstance(obj, dict):
        raise ServiceError(400, "expansion must be an object")
    collapsed = obj.get("collapsed")
    if collapsed is not None and (
        not isinstance(collapsed, list)
        or any(not isinstance(x, bool) for x in collapsed)
    ):
        raise ServiceError(400, "expansion.collapsed must be a bool list")
    limit = obj.get("limit")
    offset = obj.get("offset", 0)
    try:
        limit = None if limit is None else max(0, int(limit))
        offset = max(0, int(offset))
    except (TypeError, ValueError):
        raise ServiceError(400, "expansion limit/offset must be integers")
    return ExpansionState(
        collapsed=collapsed, limit=limit, offset=offset,
        with_ordinal=bool(obj.get("with_ordinal", False)),
    )
