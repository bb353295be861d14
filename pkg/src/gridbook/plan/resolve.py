"""Level resolution: effective keys, column dependency graph, residency rules.

Level indices run base-first: index 0 is the raw-row base level, the last
index is the scalar summary level.  "Finer" means a smaller index.

Two modes:

* with a :class:`SchemaProvider`, formulas are fully typechecked against the
  assembled source schema (this is the planner's path);
* without one, source schemas are unknown, so unresolved references are
  presumed to be source columns and type checking is skipped — structure,
  dependency cycles, and residency placement are still validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Optional, Protocol

from ..formula import ast as fast
from ..formula.catalog import AGGREGATE, JOIN, WINDOW, check_arity, lookup_function
from ..formula.errors import (
    FormulaError,
    MisplacedReferenceError,
    UnknownFunctionError,
)
from ..formula.parser import parse_formula
from ..formula.typecheck import (
    Classification,
    References,
    classify,
    extract_references,
    typecheck,
)
from ..model import (
    AdhocTableSpec,
    ControlSpec,
    FilterSpec,
    SourceSpec,
    TableElementSpec,
    ValidationIssue,
    WorkbookDocument,
)
from ..values import Storage, ValueType, json_to_storage

_INF = 10**9  # residency of constants: coarser than any level


class SchemaProvider(Protocol):
    """Schema access for physical sources (warehouse tables, registered
    raw-SQL results, CSV uploads)."""

    def source_schema(
        self, source: SourceSpec
    ) -> Optional[list[tuple[str, ValueType]]]: ...


@dataclass
class ResolvedColumn:
    column_id: str
    name: str
    resident_level: int
    hidden: bool
    tree: fast.Node
    vtype: Optional[ValueType]  # None until typechecked
    classification: Classification
    refs: References
    deps: set[str]  # local column_ids this formula needs first


@dataclass
class ResolvedLevel:
    own_keys: list[str]  # column_ids
    effective_keys: list[str]  # coarsest level's keys first
    ordering: list[tuple[str, str]]  # (column_id, "asc"|"desc")
    collapsed: bool


@dataclass
class ResolvedFilter:
    index: int
    spec: FilterSpec
    level: int  # level whose rows the predicate removes
    ready_level: int  # coarsest level that must be computed first
    tree: Optional[fast.Node] = None  # expression predicates only
    deps: set[str] = field(default_factory=set)


@dataclass
class ResolvedTable:
    element_id: str
    source_schema: Optional[list[tuple[str, ValueType]]]
    levels: list[ResolvedLevel]
    columns: dict[str, ResolvedColumn]
    topo_order: list[str]
    filters: list[ResolvedFilter]
    controls: dict[str, tuple[ValueType, Storage]]  # name -> (type, value)
    name_to_cid: dict[str, str]
    output_level: int  # lowest non-collapsed level

    def column_by_name(self, name: str) -> Optional[ResolvedColumn]:
        cid = self.name_to_cid.get(name)
        return self.columns[cid] if cid is not None else None


@dataclass
class ElementOutput:
    """What an element looks like from outside: the rows of its lowest
    non-collapsed level with every column resident at or above it."""

    element_id: str
    output_level: int
    schema: list[tuple[str, ValueType]]
    source_passthrough: list[str]  # names that come straight from the source
    resolved: Optional[ResolvedTable]  # None for adhoc tables


class ResolutionFailure(Exception):
    def __init__(self, issues: list[ValidationIssue]):
        super().__init__("; ".join(i.message for i in issues) or "resolution failed")
        self.issues = issues


def _issue(path: str, message: str) -> ValidationIssue:
    return ValidationIssue("error", path, message)


# ---------------------------------------------------------------------------
# Residency / placement rules


def effective_keys(levels_keys: list[list[str]]) -> list[list[str]]:
    """Base and summary have empty effective key sets; a middle level's set
    is its own keys plus every coarser level's keys (coarsest first)."""
    n = len(levels_keys)
    out: list[list[str]] = []
    for i in range(n):
        if i == 0 or i == n - 1:
            out.append([])
            continue
        acc: list[str] = []
        for j in range(n - 1, i - 1, -1):
            for k in levels_keys[j]:
                if k not in acc:
                    acc.append(k)
        out.append(acc)
    return out


def aggregate_arg_level(
    call: fast.Call, target: int, resof, nlevels: int
) -> int:
    """Finest residency among the refs of an aggregate's arguments; nested
    aggregates count as the next finer level below ``target``; constants
    alone default to the base level."""
    a = _expr_arg_level(call.args, target, resof)
    return 0 if a >= _INF else a


def _expr_arg_level(nodes, target: int, resof) -> int:
    a = _INF
    for node in nodes:
        for n in _shallow_walk(node):
            if isinstance(n, fast.Ref):
                r = resof(n.name)
                if r is not None:
                    a = min(a, r)
            elif isinstance(n, fast.Call) and _category(n.name) == AGGREGATE:
                a = min(a, target - 1)
            elif isinstance(n, (fast.Lookup, fast.Rollup)):
                a = min(a, _expr_arg_level([p.local for p in n.pairs], target, resof))
    return a


def _shallow_walk(node: fast.Node):
    """Preorder walk that stops at nested aggregates and join boundaries."""
    yield node
    if isinstance(node, (fast.Lookup, fast.Rollup)):
        return
    if isinstance(node, fast.Call) and _category(node.name) == AGGREGATE:
        return
    if isinstance(node, fast.Unary):
        yield from _shallow_walk(node.operand)
    elif isinstance(node, fast.Binary):
        yield from _shallow_walk(node.left)
        yield from _shallow_walk(node.right)
    elif isinstance(node, fast.Call):
        for a in node.args:
            yield from _shallow_walk(a)


def _category(name: str) -> Optional[str]:
    sig = lookup_function(name)
    return sig.category if sig else None


class _PlacementChecker:
    """Validates that a formula can be evaluated at its declared level.

    Rules (L = declared resident level, base-first indices):

    * plain references are always placeable — coarser values broadcast down,
      finer non-aggregated values resolve through the automatic-ATTR rule;
    * an aggregate's argument level must be strictly finer than the level it
      aggregates into; nested aggregates occupy successive finer levels;
    * window functions need a coarser level to partition by, so they are
      rejected at the summary level, and inside aggregate arguments;
    * join targets may not contain windows; Lookup targets may not contain
      aggregates; Rollup targets aggregate exactly one level deep.
    """

    def __init__(self, resof, nlevels: int, path: str,
                 issues: list[ValidationIssue],
                 allow_window: bool = True, allow_join: bool = True):
        self.resof = resof
        self.nlevels = nlevels
        self.path = path
        self.issues = issues
        self.allow_window = allow_window
        self.allow_join = allow_join

    def err(self, message: str) -> None:
        self.issues.append(_issue(self.path, message))

    def check(self, node: fast.Node, level: int) -> None:
        if isinstance(node, fast.Unary):
            self.check(node.operand, level)
        elif isinstance(node, fast.Binary):
            self.check(node.left, level)
            self.check(node.right, level)
        elif isinstance(node, (fast.Lookup, fast.Rollup)):
            self._check_join(node, level)
        elif isinstance(node, fast.Call):
            cat = _category(node.name)
            if cat == AGGREGATE:
                self._check_aggregate(node, level)
            elif cat == WINDOW:
                self._check_window(node, level)
            else:
                for a in node.args:
                    self.check(a, level)

    def _check_aggregate(self, node: fast.Call, target: int) -> None:
        arg_level = aggregate_arg_level(node, target, self.resof, self.nlevels)
        if arg_level >= target:
            self.err(
                f"{node.name} at level {target} must aggregate a strictly "
                f"finer level, but its argument resides at level {arg_level}"
            )
            return
        for a in node.args:
            self._check_aggregate_arg(a, target)

    def _check_aggregate_arg(self, node: fast.Node, target: int) -> None:
        for n in _shallow_walk(node):
            if isinstance(n, fast.Call):
                cat = _category(n.name)
                if cat == WINDOW:
                    self.err(
                        f"window function {n.name} cannot appear inside an "
                        "aggregate argument"
                    )
                elif cat == AGGREGATE:
                    self._check_aggregate(n, target - 1)
            elif isinstance(n, (fast.Lookup, fast.Rollup)):
                self._check_join(n, max(target - 1, 0))

    def _check_window(self, node: fast.Call, level: int) -> None:
        if not self.allow_window:
            self.err(f"window function {node.name} is not allowed here")
            return
        if level >= self.nlevels - 1:
            self.err(
                f"window function {node.name} cannot reside at the summary "
                "level: no coarser level exists to partition by"
            )
        for a in node.args:
            self.check(a, level)

    def _check_join(self, node: fast.Lookup | fast.Rollup, level: int) -> None:
        if not self.allow_join:
            kind = "Lookup" if isinstance(node, fast.Lookup) else "Rollup"
            self.err(f"{kind} is not allowed here")
            return
        for p in node.pairs:
            self.check(p.local, level)
        if isinstance(node, fast.Lookup):
            for n in fast.walk(node.target):
                if isinstance(n, fast.Call) and _category(n.name) in (
                    AGGREGATE,
                    WINDOW,
                ):
                    self.err(
                        f"{n.name} is not allowed in a Lookup target; use "
                        "Rollup for aggregation"
                    )
        else:
            self._check_rollup_target(node.target)

    def _check_rollup_target(self, node: fast.Node, depth: int = 0) -> None:
        if isinstance(node, fast.Call):
            cat = _category(node.name)
            if cat == WINDOW:
                self.err(
                    f"window function {node.name} is not allowed in a "
                    "Rollup target"
                )
                return
            if cat == AGGREGATE:
                if depth >= 1:
                    self.err("Rollup target aggregates exactly one level deep")
                    return
                depth += 1
            for a in node.args:
                self._check_rollup_target(a, depth)
        elif isinstance(node, fast.Unary):
            self._check_rollup_target(node.operand, depth)
        elif isinstance(node, fast.Binary):
            self._check_rollup_target(node.left, depth)
            self._check_rollup_target(node.right, depth)


# ---------------------------------------------------------------------------
# Resolver


class Resolver:
    """Resolves elements of one document, memoizing outputs so that
    element-ref sources and remote joins share work.  Safe for self-joins;
    cross-element cycles are reported, not followed."""

    def __init__(self, doc: WorkbookDocument,
                 provider: Optional[SchemaProvider] = None):
        self.doc = doc
        self.provider = provider
        self._outputs: dict[str, ElementOutput] = {}
        self._tables: dict[str, ResolvedTable] = {}
        self._in_progress: set[str] = set()
        self.controls = self._collect_controls()

    # -- public ------------------------------------------------------------

    def resolve_table(self, element_id: str) -> ResolvedTable:
        if element_id not in self._tables:
            self.output(element_id)
        table = self._tables.get(element_id)
        if table is None:
            raise ResolutionFailure(
                [_issue(f"elements/{element_id}", "element is not a table")]
            )
        return table

    def output(self, element_id: str) -> ElementOutput:
        cached = self._outputs.get(element_id)
        if cached is not None:
            return cached
        el = self.doc.find_element(element_id)
        path = f"elements/{element_id}"
        if el is None:
            raise ResolutionFailure(
                [_issue(path, f"unknown element {element_id!r}")]
            )
        if element_id in self._in_progress:
            raise ResolutionFailure(
                [_issue(path, f"cyclic element reference through {element_id!r}")]
            )
        self._in_progress.add(element_id)
        try:
            if el.kind == "adhoc-table":
                body = el.body
                assert isinstance(body, AdhocTableSpec)
                out = ElementOutput(
                    element_id=element_id,
                    output_level=0,
                    schema=list(body.schema),
                    source_passthrough=[n for n, _ in body.schema],
                    resolved=None,
                )
            elif el.kind == "table":
                body = el.body
                assert isinstance(body, TableElementSpec)
                out = self._resolve_element(element_id, body)
            else:
                raise ResolutionFailure(
                    [_issue(path, f"{el.kind} element cannot supply rows")]
                )
        finally:
            self._in_progress.discard(element_id)
        self._outputs[element_id] = out
        return out

    # -- internals ---------------------------------------------------------

    def _collect_controls(self) -> dict[str, tuple[ValueType, Storage]]:
        out: dict[str, tuple[ValueType, Storage]] = {}
        for el in self.doc.iter_elements():
            if el.kind != "control":
                continue
            body = el.body
            assert isinstance(body, ControlSpec)
            raw = body.current_value
            if raw is None:
                raw = body.default_value
            try:
                value = json_to_storage(raw, body.value_type)
            except (TypeError, ValueError):
                value = None
            out[body.name] = (body.value_type, value)
        return out

    def _schema_for_source(
        self, source: SourceSpec, issues: list[ValidationIssue], path: str
    ) -> Optional[list[tuple[str, ValueType]]]:
        if source.kind == "element-ref":
            return list(self.output(source.reference).schema)
        if self.provider is None:
            return None
        schema = self.provider.source_schema(source)
        if schema is None:
            issues.append(
                _issue(path, f"unknown {source.kind} source {source.reference!r}")
            )
        return schema

    def _assemble_base_schema(
        self, element_id: str, body: TableElementSpec,
        issues: list[ValidationIssue]
    ) -> Optional[list[tuple[str, ValueType]]]:
        path = f"elements/{element_id}/source"
        schema = self._schema_for_source(body.source, issues, path)
        if schema is None:
            return None
        cols = list(schema)
        names = {n for n, _ in cols}
        for idx, extra in enumerate(body.extra_inputs):
            epath = f"elements/{element_id}/extra_inputs/{idx}"
            right = self._schema_for_source(extra.source, issues, epath)
            if right is None:
                return None
            rtypes = dict(right)
            if extra.kind == "union":
                for name, vtype in cols:
                    if name not in rtypes:
                        issues.append(
                            _issue(epath, f"union input lacks column {name!r}")
                        )
                    elif rtypes[name] is not vtype:
                        issues.append(
                            _issue(
                                epath,
                                f"union column {name!r} is {rtypes[name]}, "
                                f"expected {vtype}",
                            )
                        )
                continue
            ltypes = dict(cols)
            for lname, rname in extra.on:
                if lname not in ltypes:
                    issues.append(_issue(epath, f"unknown join key {lname!r}"))
                elif rname not in rtypes:
                    issues.append(
                        _issue(epath, f"unknown join key {rname!r} in input")
                    )
                elif ltypes[lname] is not rtypes[rname]:
                    issues.append(
                        _issue(
                            epath,
                            f"join key {lname!r}={rname!r} mixes "
                            f"{ltypes[lname]} and {rtypes[rname]}",
                        )
                    )
            if not extra.on:
                issues.append(_issue(epath, "join needs at least one key pair"))
            for name, vtype in right:
                if name in names:
                    issues.append(
                        _issue(epath, f"join input duplicates column {name!r}")
                    )
                else:
                    cols.append((name, vtype))
                    names.add(name)
        return cols

    def _resolve_element(
        self, element_id: str, body: TableElementSpec
    ) -> ElementOutput:
        issues: list[ValidationIssue] = []
        path = f"elements/{element_id}"
        nlevels = len(body.levels)

        base_schema = self._assemble_base_schema(element_id, body, issues)
        if issues:
            raise ResolutionFailure(issues)
        base_names = {n for n, _ in base_schema} if base_schema is not None else set()
        base_types = dict(base_schema) if base_schema is not None else {}

        name_to_cid = {c.name: cid for cid, c in body.columns.items()}
        for name in name_to_cid:
            if name in base_names:
                issues.append(
                    _issue(path, f"column name {name!r} collides with a source column")
                )

        # parse + reference extraction
        parsed: dict[str, fast.Node] = {}
        refs: dict[str, References] = {}
        for cid, col in body.columns.items():
            cpath = f"{path}/columns/{cid}"
            try:
                tree = parse_formula(col.formula)
                for n in fast.walk(tree):
                    if isinstance(n, fast.Call):
                        sig = lookup_function(n.name)
                        if sig is None:
                            raise UnknownFunctionError(
                                f"unknown function {n.name}", n.offset
                            )
                        check_arity(sig, n)
                        n.category = sig.category
            except FormulaError as exc:
                issues.append(_issue(cpath, f"[{col.name}]: {exc}"))
                continue
            parsed[cid] = tree
            refs[cid] = extract_references(tree)

        if issues:
            raise ResolutionFailure(issues)

        # dependency graph over column_ids (self-element remote refs count)
        deps: dict[str, set[str]] = {}
        for cid, r in refs.items():
            d: set[str] = set()
            for name in r.columns:
                target = name_to_cid.get(name)
                if target is not None:
                    d.add(target)
                elif (
                    base_schema is not None
                    and name not in base_names
                    and name not in self.controls
                ):
                    issues.append(
                        _issue(
                            f"{path}/columns/{cid}",
                            f"unknown column or control [{name}]",
                        )
                    )
            for eid, cname in r.remote_columns:
                if eid == element_id:
                    target = name_to_cid.get(cname)
                    if target is not None:
                        d.add(target)
            deps[cid] = d

        try:
            topo = list(TopologicalSorter(deps).static_order())
        except CycleError as exc:
            cycle = exc.args[1] if len(exc.args) > 1 else []
            names = [body.columns[c].name for c in cycle if c in body.columns]
            issues.append(
                _issue(path, "column dependency cycle: " + " -> ".join(names))
            )
            raise ResolutionFailure(issues)

        if issues:
            raise ResolutionFailure(issues)

        # residency placement
        def resof(name: str) -> Optional[int]:
            cid = name_to_cid.get(name)
            if cid is not None:
                return body.columns[cid].resident_level
            if name in self.controls:
                return None
            return 0  # source column (known or presumed)

        for cid in topo:
            col = body.columns[cid]
            checker = _PlacementChecker(
                resof, nlevels, f"{path}/columns/{cid}", issues
            )
            checker.check(parsed[cid], col.resident_level)

        if issues:
            raise ResolutionFailure(issues)

        # remote outputs needed for typechecking
        remote_eids = {eid for r in refs.values() for eid in r.elements}
        remote_schemas: dict[str, dict[str, ValueType]] = {}
        for eid in sorted(remote_eids):
            if eid == element_id:
                continue  # self-join schema built incrementally below
            out = self.output(eid)
            remote_schemas[eid] = dict(out.schema)

        output_level = nlevels - 1
        for i, lv in enumerate(body.levels):
            if not lv.collapsed:
                output_level = i
                break

        # typecheck in dependency order
        columns: dict[str, ResolvedColumn] = {}
        typed_names: dict[str, tuple[ValueType, int]] = {
            name: (vtype, 0) for name, vtype in (base_schema or [])
        }
        control_types = {n: t for n, (t, _v) in self.controls.items()}
        for cid in topo:
            col = body.columns[cid]
            cpath = f"{path}/columns/{cid}"
            tree = parsed[cid]
            vtype: Optional[ValueType] = None
            if base_schema is not None:
                if element_id in {e for e in refs[cid].elements}:
                    remote_schemas[element_id] = self._self_schema(
                        base_schema, body, columns, output_level
                    )
                try:
                    typecheck(tree, typed_names, control_types, remote_schemas)
                    vtype = tree.vtype
                except FormulaError as exc:
                    issues.append(_issue(cpath, f"[{col.name}]: {exc}"))
                if vtype is not None:
                    typed_names[col.name] = (vtype, col.resident_level)
            columns[cid] = ResolvedColumn(
                column_id=cid,
                name=col.name,
                resident_level=col.resident_level,
                hidden=col.hidden,
                tree=tree,
                vtype=vtype,
                classification=classify(tree),
                refs=refs[cid],
                deps=deps[cid],
            )

        if issues:
            raise ResolutionFailure(issues)

        levels = self._resolve_levels(body, issues, path)
        filters = self._resolve_filters(
            element_id, body, name_to_cid, resof, nlevels,
            typed_names if base_schema is not None else None,
            control_types, remote_schemas, issues,
        )
        if issues:
            raise ResolutionFailure(issues)

        table = ResolvedTable(
            element_id=element_id,
            source_schema=base_schema,
            levels=levels,
            columns=columns,
            topo_order=topo,
            filters=filters,
            controls=self.controls,
            name_to_cid=name_to_cid,
            output_level=output_level,
        )
        self._tables[element_id] = table

        schema: list[tuple[str, ValueType]] = []
        passthrough: list[str] = []
        # defined columns shadow source columns with the same name (SQL
        # identifiers are case-insensitive, so compare casefolded)
        shadowed = {
            col.name.casefold()
            for col in body.columns.values()
            if col.resident_level >= output_level
        }
        if output_level == 0 and base_schema is not None:
            for name, vtype in base_schema:
                if name.casefold() in shadowed:
                    continue
                schema.append((name, vtype))
                passthrough.append(name)
        for cid, col in body.columns.items():
            rc = columns[cid]
            if col.hidden or col.resident_level < output_level:
                continue
            schema.append(
                (col.name, rc.vtype if rc.vtype is not None else ValueType.NUMBER)
            )
        return ElementOutput(
            element_id=element_id,
            output_level=output_level,
            schema=schema,
            source_passthrough=passthrough,
            resolved=table,
        )

    def _self_schema(
        self,
        base_schema: list[tuple[str, ValueType]],
        body: TableElementSpec,
        done: dict[str, ResolvedColumn],
        output_level: int,
    ) -> dict[str, ValueType]:
        out: dict[str, ValueType] = {}
        if output_level == 0:
            out.update(base_schema)
        for cid, rc in done.items():
            col = body.columns[cid]
            if col.hidden or col.resident_level < output_level:
                continue
            if rc.vtype is not None:
                out[col.name] = rc.vtype
        return out

    def _resolve_levels(
        self, body: TableElementSpec, issues: list[ValidationIssue], path: str
    ) -> list[ResolvedLevel]:
        eff = effective_keys([lv.keys for lv in body.levels])
        out: list[ResolvedLevel] = []
        for i, lv in enumerate(body.levels):
            ordering = list(lv.ordering)
            for cid, direction in ordering:
                if direction not in ("asc", "desc"):
                    issues.append(
                        _issue(f"{path}/levels/{i}", f"bad direction {direction!r}")
                    )
            if not ordering:
                ordering = [(k, "asc") for k in lv.keys]
            out.append(
                ResolvedLevel(
                    own_keys=list(lv.keys),
                    effective_keys=eff[i],
                    ordering=ordering,
                    collapsed=lv.collapsed,
                )
            )
        return out

    def _resolve_filters(
        self,
        element_id: str,
        body: TableElementSpec,
        name_to_cid: dict[str, str],
        resof,
        nlevels: int,
        typed_names,
        control_types,
        remote_schemas,
        issues: list[ValidationIssue],
    ) -> list[ResolvedFilter]:
        out: list[ResolvedFilter] = []
        for idx, f in enumerate(body.filters):
            fpath = f"elements/{element_id}/filters/{idx}"
            if f.kind == "expression":
                rf = self._resolve_expression_filter(
                    idx, f, fpath, resof, nlevels, typed_names,
                    control_types, remote_schemas, name_to_cid, issues,
                )
                if rf is not None:
                    out.append(rf)
                continue
            target = body.columns.get(f.target or "")
            if target is None:
                issues.append(_issue(fpath, f"unknown filter column {f.target!r}"))
                continue
            level = target.resident_level
            ready = level
            deps = {target.column_id}
            if f.kind == "top-n":
                by = body.columns.get(f.by) if f.by else target
                if by is None:
                    issues.append(_issue(fpath, f"unknown rank column {f.by!r}"))
                    continue
                if by.resident_level < level:
                    issues.append(
                        _issue(
                            fpath,
                            f"top-n rank column [{by.name}] resides at a finer "
                            f"level than its target [{target.name}]",
                        )
                    )
                    continue
                ready = max(ready, by.resident_level)
                deps.add(by.column_id)
            out.append(
                ResolvedFilter(
                    index=idx, spec=f, level=level, ready_level=ready, deps=deps
                )
            )
        return out

    def _resolve_expression_filter(
        self, idx, f, fpath, resof, nlevels, typed_names, control_types,
        remote_schemas, name_to_cid, issues,
    ) -> Optional[ResolvedFilter]:
        try:
            tree = parse_formula(f.expression or "")
            for n in fast.walk(tree):
                if isinstance(n, fast.Call):
                    sig = lookup_function(n.name)
                    if sig is None:
                        raise UnknownFunctionError(
                            f"unknown function {n.name}", n.offset
                        )
                    check_arity(sig, n)
                    n.category = sig.category
                    if sig.category == WINDOW:
                        raise MisplacedReferenceError(
                            f"window function {n.name} is not allowed in a "
                            "filter",
                            n.offset,
                        )
                if isinstance(n, (fast.Lookup, fast.Rollup)):
                    raise MisplacedReferenceError(
                        "Lookup/Rollup is not allowed in a filter", n.offset
                    )
        except FormulaError as exc:
            issues.append(_issue(fpath, str(exc)))
            return None

        plain: list[int] = []
        naturals: list[int] = []

        def natural(call: fast.Call) -> int:
            a = _INF
            for arg in call.args:
                for n in _shallow_walk(arg):
                    if isinstance(n, fast.Ref):
                        r = resof(n.name)
                        if r is not None:
                            a = min(a, r)
                    elif isinstance(n, fast.Call) and n.category == AGGREGATE:
                        a = min(a, natural(n))
            return (0 if a >= _INF else a) + 1

        def scan(node: fast.Node) -> None:
            if isinstance(node, fast.Call) and node.category == AGGREGATE:
                naturals.append(natural(node))
                return
            if isinstance(node, fast.Ref):
                r = resof(node.name)
                if r is not None:
                    plain.append(r)
            elif isinstance(node, fast.Unary):
                scan(node.operand)
            elif isinstance(node, fast.Binary):
                scan(node.left)
                scan(node.right)
            elif isinstance(node, fast.Call):
                for a in node.args:
                    scan(a)

        scan(tree)
        for nat in naturals:
            if nat > nlevels - 1:
                issues.append(
                    _issue(fpath, "filter aggregate has no level to land on")
                )
                return None
        if plain:
            level = min(plain)
        elif naturals:
            level = min(naturals)
        else:
            level = 0
        ready = max([level] + plain + naturals)

        refs = extract_references(tree)
        deps = {name_to_cid[n] for n in refs.columns if n in name_to_cid}
        if typed_names is not None:
            unknown = [
                n
                for n in refs.columns
                if n not in typed_names and n not in control_types
            ]
            if unknown:
                issues.append(
                    _issue(fpath, f"unknown column or control {unknown[0]!r}")
                )
                return None
            try:
                typecheck(tree, typed_names, control_types, remote_schemas)
            except FormulaError as exc:
                issues.append(_issue(fpath, str(exc)))
                return None
            if tree.vtype is not ValueType.LOGICAL:
                issues.append(
                    _issue(fpath, f"filter must be Logical, got {tree.vtype}")
                )
                return None
        return ResolvedFilter(
            index=idx, spec=f, level=level, ready_level=ready, tree=tree,
            deps=deps,
        )


# ---------------------------------------------------------------------------
# Module-level conveniences


def resolve_table(
    doc: WorkbookDocument, element_id: str,
    provider: Optional[SchemaProvider] = None,
) -> ResolvedTable:
    return Resolver(doc, provider).resolve_table(element_id)


def resolution_errors(
    doc: WorkbookDocument, element_id: str,
    provider: Optional[SchemaProvider] = None,
    resolver: Optional[Resolver] = None,
) -> list[ValidationIssue]:
    """Semantic issues for one element; empty when it resolves cleanly."""
    r = resolver or Resolver(doc, provider)
    try:
        r.output(element_id)
    except ResolutionFailure as exc:
        return exc.issues
    except RecursionError:
        return [_issue(f"elements/{element_id}", "element graph too deep")]
    return []
