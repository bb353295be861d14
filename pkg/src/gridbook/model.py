"""Workbook document model, canonical JSON serialization, and validation.

Canonical form: UTF-8 JSON with sorted object keys and no insignificant
whitespace, so two encodings of structurally equal documents are
byte-identical.  Schema is documented in docs/document-format.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .values import ValueType

ELEMENT_KINDS = ("table", "control", "adhoc-table")
SOURCE_KINDS = ("warehouse-table", "raw-sql", "csv-upload", "element-ref")
PREDICATE_KINDS = (
    "include-list",
    "exclude-list",
    "range",
    "text-match",
    "top-n",
    "expression",
)


class DocumentDecodeError(Exception):
    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


@dataclass
class SourceSpec:
    kind: str  # one of SOURCE_KINDS
    reference: str  # table name | SQL text | upload id | element_id


@dataclass
class JoinOrUnionSpec:
    kind: str  # "join" | "union"
    source: SourceSpec
    join_type: str = "inner"  # "inner" | "left" (join only)
    on: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class LevelSpec:
    keys: list[str] = field(default_factory=list)  # column_ids
    ordering: list[tuple[str, str]] = field(default_factory=list)
    collapsed: bool = False


@dataclass
class ColumnSpec:
    column_id: str
    name: str
    formula: str
    resident_level: int = 0
    hidden: bool = False


@dataclass
class FilterSpec:
    target: Optional[str]  # column_id; None only for expression predicates
    kind: str  # one of PREDICATE_KINDS
    values: list[Any] = field(default_factory=list)  # include/exclude lists
    low: Any = None
    high: Any = None
    pattern: Optional[str] = None
    n: Optional[int] = None
    by: Optional[str] = None  # top-n rank column_id
    direction: str = "desc"
    expression: Optional[str] = None


@dataclass
class TableElementSpec:
    source: SourceSpec
    extra_inputs: list[JoinOrUnionSpec] = field(default_factory=list)
    levels: list[LevelSpec] = field(default_factory=list)
    columns: dict[str, ColumnSpec] = field(default_factory=dict)
    filters: list[FilterSpec] = field(default_factory=list)


@dataclass
class ControlSpec:
    control_id: str
    name: str
    value_type: ValueType
    current_value: Any = None
    default_value: Any = None


@dataclass
class AdhocTableSpec:
    schema: list[tuple[str, ValueType]]
    warehouse_table_ref: str


@dataclass
class Element:
    element_id: str
    kind: str  # one of ELEMENT_KINDS
    body: TableElementSpec | ControlSpec | AdhocTableSpec


@dataclass
class Page:
    page_id: str
    elements: list[Element] = field(default_factory=list)


@dataclass
class WorkbookDocument:
    doc_id: str
    name: Optional[str] = None
    version: int = 1
    pages: list[Page] = field(default_factory=list)

    def iter_elements(self):
        for page in self.pages:
            yield from page.elements

    def find_element(self, element_id: str) -> Optional[Element]:
        for el in self.iter_elements():
            if el.element_id == element_id:
                return el
        return None


# ---------------------------------------------------------------------------
# Serialization


def _source_to_json(s: SourceSpec) -> dict:
    return {"kind": s.kind, "reference": s.reference}


def _element_to_json(el: Element) -> dict:
    out: dict[str, Any] = {"element_id": el.element_id, "kind": el.kind}
    body = el.body
    if el.kind == "table":
        assert isinstance(body, TableElementSpec)
        out["source"] = _source_to_json(body.source)
        out["extra_inputs"] = [
            {
                "kind": j.kind,
                "source": _source_to_json(j.source),
                "join_type": j.join_type,
                "on": [list(pair) for pair in j.on],
            }
            for j in body.extra_inputs
        ]
        out["levels"] = [
            {
                "keys": lv.keys,
                "ordering": [list(pair) for pair in lv.ordering],
                "collapsed": lv.collapsed,
            }
            for lv in body.levels
        ]
        out["columns"] = {
            cid: {
                "name": c.name,
                "formula": c.formula,
                "resident_level": c.resident_level,
                "hidden": c.hidden,
            }
            for cid, c in body.columns.items()
        }
        out["filters"] = [
            {
                "target": f.target,
                "kind": f.kind,
                "values": f.values,
                "low": f.low,
                "high": f.high,
                "pattern": f.pattern,
                "n": f.n,
                "by": f.by,
                "direction": f.direction,
                "expression": f.expression,
            }
            for f in body.filters
        ]
    elif el.kind == "control":
        assert isinstance(body, ControlSpec)
        out.update(
            control_id=body.control_id,
            name=body.name,
            value_type=str(body.value_type),
            current_value=body.current_value,
            default_value=body.default_value,
        )
    else:
        assert isinstance(body, AdhocTableSpec)
        out["schema"] = [[n, str(t)] for n, t in body.schema]
        out["warehouse_table_ref"] = body.warehouse_table_ref
    return out


def document_to_json(doc: WorkbookDocument) -> dict:
    return {
        "doc_id": doc.doc_id,
        "name": doc.name,
        "version": doc.version,
        "pages": [
            {
                "page_id": p.page_id,
                "elements": [_element_to_json(e) for e in p.elements],
            }
            for p in doc.pages
        ],
    }


def encode_document(doc: WorkbookDocument) -> bytes:
    """Canonical byte encoding: sorted keys, minimal whitespace."""
    return json.dumps(
        document_to_json(doc), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")


def _vtype(name: Any, where: str) -> ValueType:
    try:
        return ValueType(name)
    except ValueError:
        raise DocumentDecodeError(f"unknown value type {name!r} in {where}")


def _decode_element(obj: dict) -> Element:
    kind = obj.get("kind")
    eid = str(obj.get("element_id", ""))
    if kind == "table":
        body = TableElementSpec(
            source=_decode_source(obj.get("source", {})),
            extra_inputs=[
                JoinOrUnionSpec(
                    kind=str(j.get("kind", "join")),
                    source=_decode_source(j.get("source", {})),
                    join_type=str(j.get("join_type", "inner")),
                    on=[tuple(pair) for pair in j.get("on", [])],
                )
                for j in obj.get("extra_inputs", [])
            ],
            levels=[
                LevelSpec(
                    keys=[str(k) for k in lv.get("keys", [])],
                    ordering=[tuple(pair) for pair in lv.get("ordering", [])],
                    collapsed=bool(lv.get("collapsed", False)),
                )
                for lv in obj.get("levels", [])
            ],
            columns={
                str(cid): ColumnSpec(
                    column_id=str(cid),
                    name=str(c.get("name", "")),
                    formula=str(c.get("formula", "")),
                    resident_level=int(c.get("resident_level", 0)),
                    hidden=bool(c.get("hidden", False)),
                )
                for cid, c in obj.get("columns", {}).items()
            },
            filters=[
                FilterSpec(
                    target=f.get("target"),
                    kind=str(f.get("kind", "")),
                    values=list(f.get("values", [])),
                    low=f.get("low"),
                    high=f.get("high"),
                    pattern=f.get("pattern"),
                    n=f.get("n"),
                    by=f.get("by"),
                    direction=str(f.get("direction", "desc")),
                    expression=f.get("expression"),
                )
                for f in obj.get("filters", [])
            ],
        )
        return Element(eid, "table", body)
    if kind == "control":
        return Element(
            eid,
            "control",
            ControlSpec(
                control_id=str(obj.get("control_id", eid)),
                name=str(obj.get("name", "")),
                value_type=_vtype(obj.get("value_type"), f"control {eid}"),
                current_value=obj.get("current_value"),
                default_value=obj.get("default_value"),
            ),
        )
    if kind == "adhoc-table":
        return Element(
            eid,
            "adhoc-table",
            AdhocTableSpec(
                schema=[
                    (str(n), _vtype(t, f"adhoc-table {eid}"))
                    for n, t in obj.get("schema", [])
                ],
                warehouse_table_ref=str(obj.get("warehouse_table_ref", "")),
            ),
        )
    raise DocumentDecodeError(f"unknown element kind {kind!r}")


def _decode_source(obj: dict) -> SourceSpec:
    kind = str(obj.get("kind", ""))
    if kind not in SOURCE_KINDS:
        raise DocumentDecodeError(f"unknown source kind {kind!r}")
    return SourceSpec(kind=kind, reference=str(obj.get("reference", "")))


def document_from_json(data: dict) -> WorkbookDocument:
    try:
        return WorkbookDocument(
            doc_id=str(data.get("doc_id", "")),
            name=data.get("name"),
            version=int(data.get("version", 1)),
            pages=[
                Page(
                    page_id=str(p.get("page_id", "")),
                    elements=[_decode_element(e) for e in p.get("elements", [])],
                )
                for p in data.get("pages", [])
            ],
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise DocumentDecodeError(f"malformed document: {exc}")


def decode_document(text: bytes | str) -> WorkbookDocument:
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentDecodeError(f"invalid JSON: {exc.msg}", exc.pos)
    if not isinstance(data, dict):
        raise DocumentDecodeError("document must be a JSON object")
    return document_from_json(data)


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationIssue:
    severity: str  # "error" | "warning"
    path: str
    message: str


class ValidationReport(list):
    @property
    def errors(self) -> list[ValidationIssue]:
        return [i for i in self if i.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_document(doc: WorkbookDocument) -> ValidationReport:
    """Structural and semantic validation.

    Problems are reported, never raised.  The report is empty exactly when
    every element resolves, typechecks, and can be lowered to a plan.
    """
    report = ValidationReport()

    def err(path: str, message: str) -> None:
        report.append(ValidationIssue("error", path, message))

    seen_ids: set[str] = set()
    for page in doc.pages:
        for el in page.elements:
            path = f"pages/{page.page_id}/elements/{el.element_id}"
            if el.element_id in seen_ids:
                err(path, f"duplicate element id {el.element_id!r}")
            seen_ids.add(el.element_id)
            if el.kind not in ELEMENT_KINDS:
                err(path, f"unknown element kind {el.kind!r}")

    # element source reference graph must be acyclic and closed
    graph: dict[str, set[str]] = {}
    for el in doc.iter_elements():
        deps: set[str] = set()
        if el.kind == "table":
            body = el.body
            assert isinstance(body, TableElementSpec)
            sources = [body.source] + [j.source for j in body.extra_inputs]
            for s in sources:
                if s.kind == "element-ref":
                    deps.add(s.reference)
                    if s.reference not in seen_ids:
                        err(
                            f"elements/{el.element_id}/source",
                            f"unknown element reference {s.reference!r}",
                        )
        graph[el.element_id] = deps

    cycle = _find_cycle(graph)
    if cycle:
        err("elements", "cyclic element reference: " + " -> ".join(cycle))
        return report

    for el in doc.iter_elements():
        if el.kind == "table":
            _validate_table(doc, el, report)
    return report


def _validate_table(doc: WorkbookDocument, el: Element,
                    report: ValidationReport) -> None:
    body = el.body
    assert isinstance(body, TableElementSpec)
    path = f"elements/{el.element_id}"

    def err(sub: str, message: str) -> None:
        report.append(ValidationIssue("error", f"{path}/{sub}", message))

    levels = body.levels
    if len(levels) < 2:
        err("levels", "a table needs at least a base and a summary level")
        return
    if levels[0].keys:
        err("levels/0", "base level must have an empty key list")
    if levels[-1].keys:
        err(f"levels/{len(levels) - 1}", "summary level must have an empty key list")

    names: set[str] = set()
    for cid, col in body.columns.items():
        if not col.name:
            err(f"columns/{cid}", "column name must be nonempty")
        elif col.name.casefold() in names:
            # SQL identifiers are case-insensitive; so are display names
            err(f"columns/{cid}", f"duplicate column name {col.name!r}")
        names.add(col.name.casefold())
        if not (0 <= col.resident_level < len(levels)):
            err(
                f"columns/{cid}",
                f"resident_level {col.resident_level} out of range",
            )

    for i, lv in enumerate(levels):
        for key in lv.keys:
            col = body.columns.get(key)
            if col is None:
                err(f"levels/{i}", f"key references unknown column {key!r}")
            elif col.resident_level >= i:
                err(
                    f"levels/{i}",
                    f"key [{col.name}] must reference a column from a "
                    f"lower level (resident at {col.resident_level})",
                )
        for cid, _direction in lv.ordering:
            col = body.columns.get(cid)
            if col is None:
                err(f"levels/{i}", f"ordering references unknown column {cid!r}")
            elif col.resident_level > i:
                err(
                    f"levels/{i}",
                    f"ordering column [{col.name}] must be resident at or "
                    "below this level",
                )

    for idx, f in enumerate(body.filters):
        if f.kind not in PREDICATE_KINDS:
            err(f"filters/{idx}", f"unknown predicate kind {f.kind!r}")
        elif f.kind == "expression":
            if not f.expression:
                err(f"filters/{idx}", "expression predicate needs a formula")
        elif f.target is None:
            err(f"filters/{idx}", "predicate needs a target column")
        elif f.target not in body.columns:
            err(f"filters/{idx}", f"unknown target column {f.target!r}")
        if f.kind == "top-n":
            if f.by is not None and f.by not in body.columns:
                err(f"filters/{idx}", f"unknown rank column {f.by!r}")
            if not isinstance(f.n, int) or f.n <= 0:
                err(f"filters/{idx}", "top-n needs a positive integer n")

    # semantic checks (formula typecheck, dependency cycles) via the planner
    if not report.errors:
        from .plan.resolve import resolution_errors

        for issue in resolution_errors(doc, el.element_id):
            report.append(issue)


def _find_cycle(graph: dict[str, set[str]]) -> list[str] | None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph}
    stack: list[str] = []

    def visit(n: str) -> list[str] | None:
        color[n] = GRAY
        stack.append(n)
        for m in sorted(graph.get(n, ())):
            if m not in color:
                continue
            if color[m] == GRAY:
                return stack[stack.index(m):] + [m]
            if color[m] == WHITE:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        color[n] = BLACK
        return None

    for n in sorted(graph):
        if color[n] == WHITE:
            found = visit(n)
            if found:
                return found
    return None
