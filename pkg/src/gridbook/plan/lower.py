"""Lowering: resolved table element + expansion state -> logical plan.

The lowerer walks columns in dependency order and maintains one "current
table" per grouping level, appending primitive stages as needs arise:

* coarser-level references broadcast down through a null-safe left join on
  the coarser level's effective keys;
* finer-level non-aggregated references resolve through the automatic-ATTR
  rule (Null / the single value / the multi-value marker);
* aggregates group the argument level's table by the target level's
  effective keys and join the result back on;
* window columns partition by the next coarser level's effective keys and
  order by the level's ordering plus the synthetic scan ordinal;
* filters apply greedily as soon as their referenced columns exist, and a
  grouped-level filter semi-joins every already-built finer table.

Plans are deterministic: identical (document, state) yields an identical
stage list and therefore an identical fingerprint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Protocol

from ..formula import ast as fast
from ..formula.catalog import AGGREGATE, WINDOW
from ..model import FilterSpec, SourceSpec
from ..values import Storage, ValueType, json_to_storage, parse_date_text
from . import stages as st
from .resolve import (
    ElementOutput,
    ResolvedColumn,
    ResolvedFilter,
    ResolvedTable,
    Resolver,
)

ORD = st.ORD


class PlanningError(Exception):
    def __init__(self, message: str, element_id: str = ""):
        super().__init__(message)
        self.element_id = element_id


class PlanProvider(Protocol):
    """Physical source access used at lowering time."""

    def source_schema(
        self, source: SourceSpec
    ) -> Optional[list[tuple[str, ValueType]]]: ...

    def source_table(self, source: SourceSpec) -> tuple[str, str]:
        """Physical table name and version token for a non-element source."""
        ...


@dataclass
class ExpansionState:
    """Per-request view state: which levels are collapsed, plus paging."""

    collapsed: Optional[list[bool]] = None  # None = document flags
    limit: Optional[int] = None
    offset: int = 0
    # retain the synthetic row ordinal in the output; results fetched with
    # it can later answer re-sort/re-page/extension requests locally
    with_ordinal: bool = False


_AGG_FUNCS = {
    "Sum": "sum",
    "Avg": "avg",
    "Min": "min",
    "Max": "max",
    "Count": "count",
    "CountIf": "count_if",
    "CountDistinct": "count_distinct",
    "Attr": "attr",
}

_WINDOW_FUNCS = {
    "Lag": "lag",
    "Lead": "lead",
    "Rank": "rank",
    "FillDown": "fill_down",
    "MovingAverage": "moving_average",
    "CumulativeSum": "cumulative_sum",
}

_SCALAR_FUNCS = {
    "If": "if",
    "Coalesce": "coalesce",
    "Abs": "abs",
    "Round": "round",
    "Concat": "concat",
    "Lower": "lower",
    "Upper": "upper",
    "DateTrunc": "datetrunc",
    "DateDiff": "datediff",
    "Year": "year",
    "Month": "month",
}


class _Lowerer:
    def __init__(self, resolver: Resolver, provider: PlanProvider,
                 element_id: str, subplans: dict[str, st.Plan],
                 restrict: Optional[set[str]] = None):
        self.resolver = resolver
        self.provider = provider
        self.element_id = element_id
        self.table: ResolvedTable = resolver.resolve_table(element_id)
        self.subplans = subplans  # element_id -> embedded output plan
        self.restrict = restrict  # self-join targets: only these columns
        self.stages: list[st.Stage] = []
        self.current: dict[int, str] = {}  # level -> table name
        self.internal: dict[str, str] = {}  # column_id -> internal name
        self.source_internal: dict[str, str] = {}  # source name -> internal
        self.computed: set[str] = set()
        self.in_progress: set[str] = set()
        self.memo: dict[tuple, str] = {}  # broadcast/attr reuse
        self.pending_filters: list[ResolvedFilter] = []
        self.applied_filters: list[ResolvedFilter] = []
        self.filter_stage_levels: list[int] = []
        self._tables = 0
        self._temps = 0
        self._names: set[str] = {ORD}

    # -- name management ---------------------------------------------------

    def _table_name(self) -> str:
        self._tables += 1
        return f"t{self._tables}"

    def _temp(self) -> str:
        self._temps += 1
        name = f"x{self._temps}"
        self._names.add(name.casefold())
        return name

    def _claim(self, wanted: str) -> str:
        # SQL identifiers are case-insensitive: claim names casefolded so
        # e.g. a defined "Mgr" never collides with a source "MGR"
        name = wanted
        while name.casefold() in self._names:
            name += "_"
        self._names.add(name.casefold())
        return name

    # -- entry points --------------------------------------------------------

    def lower(self, state: ExpansionState) -> st.Plan:
        n = len(self.table.levels)
        collapsed = state.collapsed
        if collapsed is None:
            collapsed = [lv.collapsed for lv in self.table.levels]
        if len(collapsed) != n:
            raise PlanningError(
                f"expansion state has {len(collapsed)} levels, table has {n}",
                self.element_id,
            )
        output_level = n - 1
        for i, flag in enumerate(collapsed):
            if not flag:
                output_level = i
                break

        self._build_base()
        self.pending_filters = list(self.table.filters)
        self._apply_ready_filters()
        for cid in self._column_order():
            self._compute_column(cid)
            self._apply_ready_filters()
        for f in self.pending_filters:
            raise PlanningError(
                f"filter {f.index} depends on columns that never computed",
                self.element_id,
            )

        self._ensure_level(output_level)
        proj, schema, visible, keys = self._projection(output_level)
        # keep the ordinal when asked for, and always when no column is
        # visible at the output level: SQL has no zero-column SELECT
        if state.with_ordinal or not proj:
            proj = proj + [(ORD, ORD, ValueType.NUMBER)]
            schema = schema + [(ORD, ValueType.NUMBER)]
        sort_items = self._display_order(output_level)
        out = self.current[output_level]
        sort_name = self._table_name()
        self.stages.append(st.Sort(sort_name, out, sort_items))
        proj_name = self._table_name()
        self.stages.append(st.Project(proj_name, sort_name, proj))
        final = proj_name
        if state.limit is not None:
            final = self._table_name()
            self.stages.append(
                st.Page(final, proj_name, state.limit, state.offset)
            )

        meta = st.PlanMeta(
            element_id=self.element_id,
            output_level=output_level,
            level_count=n,
            base_output=(output_level == 0),
            applied_filters=len(self.applied_filters),
            filter_stage_levels=list(self.filter_stage_levels),
            visible=visible,
            key_columns=keys,
            source_columns=[n_ for n_, _ in (self.table.source_schema or [])],
        )
        plan = st.Plan(self.stages, final, schema, meta)
        plan.meta.core_key = hashlib.sha256(
            "\n".join(
                st._stage_text(s)
                for s in self.stages
                if not isinstance(s, (st.Sort, st.Project, st.Page))
            ).encode()
        ).hexdigest()
        return plan

    def lower_output(self) -> st.Plan:
        """Unpaged plan of this element's external output (all columns at or
        above the lowest non-collapsed level, plus the row ordinal)."""
        self._build_base()
        out_level = self.table.output_level
        # declaration order for the projection; computation below may run
        # filter prerequisites earlier
        order = [
            cid for cid in self.table.topo_order
            if self.restrict is None or cid in self.restrict
        ]
        self.pending_filters = list(self.table.filters)
        self._apply_ready_filters()
        for cid in self._column_order():
            self._compute_column(cid)
            self._apply_ready_filters()
        self._ensure_level(out_level)

        cols: list[tuple[str, str, ValueType]] = []
        if out_level == 0:
            shadowed = {
                self.table.columns[cid].name.casefold()
                for cid in order
                if self.table.columns[cid].resident_level >= out_level
            }
            for name, vtype in self.table.source_schema or []:
                if name.casefold() in shadowed:
                    continue
                cols.append((self.source_internal[name], name, vtype))
        for cid in order:
            c = self.table.columns[cid]
            if c.resident_level < out_level or c.vtype is None:
                continue
            internal = self._col_at(cid, out_level)
            cols.append((internal, c.name, c.vtype))
        sort_items = self._display_order(out_level)
        sort_name = self._table_name()
        self.stages.append(st.Sort(sort_name, self.current[out_level], sort_items))
        renum = self._table_name()
        self.stages.append(st.Renumber(renum, sort_name, sort_items))
        proj = self._table_name()
        self.stages.append(
            st.Project(
                proj, renum, cols + [(ORD, ORD, ValueType.NUMBER)]
            )
        )
        schema = [(d, t) for _s, d, t in cols] + [(ORD, ValueType.NUMBER)]
        return st.Plan(self.stages, proj, schema,
                       st.PlanMeta(element_id=self.element_id))

    # -- base assembly -------------------------------------------------------

    def _build_base(self) -> None:
        body = self._body()
        name = self._scan(body.source)
        for extra in body.extra_inputs:
            right = self._scan(extra.source, right_side=True)
            if extra.kind == "union":
                merged = self._table_name()
                pairs = [(ORD, ORD)]
                for native, _t in self.table.source_schema or []:
                    pairs.append((self.source_internal[native], native))
                marker = self._temp()
                left_marked = self._table_name()
                self.stages.append(
                    st.Compute(left_marked, name,
                               [st.ColDef(marker, st.SLit(0), ValueType.NUMBER)])
                )
                right_marked = self._table_name()
                self.stages.append(
                    st.Compute(right_marked, right,
                               [st.ColDef(marker, st.SLit(1), ValueType.NUMBER)])
                )
                self.stages.append(
                    st.UnionAll(
                        merged, left_marked, right_marked,
                        [(marker, marker)] + pairs,
                    )
                )
                renum = self._table_name()
                self.stages.append(
                    st.Renumber(
                        renum, merged,
                        [st.OrderItem(marker), st.OrderItem(ORD)],
                        drop=[marker],
                    )
                )
                name = renum
                continue
            rord = self._temp()
            right_cols = [(ORD, rord)]
            for src, _t in self._right_schema(extra.source):
                internal = self._claim(src)
                self.source_internal[src] = internal
                right_cols.append((self._sub_internal(extra.source, src), internal))
            joined = self._table_name()
            on = [
                (self.source_internal[l], self._sub_internal(extra.source, r))
                for l, r in extra.on
            ]
            self.stages.append(
                st.Join(
                    joined, name, right,
                    "inner" if extra.join_type == "inner" else "left",
                    on, null_safe=False, right_cols=right_cols,
                )
            )
            renum = self._table_name()
            self.stages.append(
                st.Renumber(
                    renum, joined,
                    [st.OrderItem(ORD), st.OrderItem(rord)],
                    drop=[rord],
                )
            )
            name = renum
        self.current[0] = name

    def _body(self):
        el = self.resolver.doc.find_element(self.element_id)
        assert el is not None
        return el.body

    def _scan(self, source: SourceSpec, right_side: bool = False) -> str:
        out = self._table_name()
        if source.kind == "element-ref":
            plan = self._element_plan(source.reference)
            fp = plan.fingerprint()
            self.stages.append(
                st.Scan(out, st.SubplanScan(source.reference, plan, fp))
            )
            if not right_side:
                for name, vtype in plan.schema:
                    if name == ORD:
                        continue
                    internal = self._claim(name)
                    self.source_internal[name] = internal
                if any(n != self.source_internal.get(n) for n, _ in plan.schema
                       if n != ORD):
                    # subplan columns carry display names; rename stage
                    out = self._rename_subplan(out, plan)
            return out
        physical, version = self.provider.source_table(source)
        schema = self.provider.source_schema(source)
        if schema is None:
            raise PlanningError(
                f"unknown source {source.reference!r}", self.element_id
            )
        cols = []
        for name, vtype in schema:
            if right_side:
                cols.append((name, name, vtype))
            else:
                internal = self._claim(name)
                self.source_internal[name] = internal
                cols.append((name, internal, vtype))
        self.stages.append(st.Scan(out, st.TableScan(physical, version, cols)))
        return out

    def _rename_subplan(self, table: str, plan: st.Plan) -> str:
        cols = [
            (name, self.source_internal.get(name, name), vtype)
            for name, vtype in plan.schema
            if name != ORD
        ] + [(ORD, ORD, ValueType.NUMBER)]
        out = self._table_name()
        self.stages.append(st.Project(out, table, cols))
        return out

    def _sub_internal(self, source: SourceSpec, name: str) -> str:
        # right-side scans keep their native column names
        return name

    def _right_schema(self, source: SourceSpec) -> list[tuple[str, ValueType]]:
        if source.kind == "element-ref":
            plan = self._element_plan(source.reference)
            return [(n, t) for n, t in plan.schema if n != ORD]
        schema = self.provider.source_schema(source)
        if schema is None:
            raise PlanningError(
                f"unknown source {source.reference!r}", self.element_id
            )
        return schema

    def _source_names_of(self, _table: str) -> list[str]:
        return [self.source_internal[n] for n, _ in (self.table.source_schema or [])]

    def _element_plan(self, eid: str) -> st.Plan:
        if eid == self.element_id:
            # self-join: target the output over the columns built so far
            restrict = set(self.computed)
            sub = _Lowerer(self.resolver, self.provider, eid, self.subplans,
                           restrict=restrict)
            return sub.lower_output()
        if eid not in self.subplans:
            sub = _Lowerer(self.resolver, self.provider, eid, self.subplans)
            self.subplans[eid] = sub.lower_output()
        return self.subplans[eid]

    # -- levels --------------------------------------------------------------

    def _eff_keys(self, level: int) -> list[str]:
        return self.table.levels[level].effective_keys

    def _ensure_level(self, level: int) -> None:
        if level in self.current:
            return
        keys = self._eff_keys(level)
        for k in keys:
            self._compute_column(k)
            self._ensure_key_in_base(k)
        key_names = [self.internal[k] for k in keys]
        out = self._table_name()
        self.stages.append(
            st.GroupBy(
                out, self.current[0], key_names,
                [st.AggDef(ORD, "min", st.SCol(ORD), ValueType.NUMBER)],
            )
        )
        self.current[level] = out

    def _ensure_key_in_base(self, cid: str) -> None:
        c = self.table.columns[cid]
        if c.resident_level == 0:
            return
        self._broadcast(cid, 0)

    # -- column computation --------------------------------------------------

    def _compute_column(self, cid: str) -> None:
        if cid in self.computed:
            return
        if cid in self.in_progress:
            name = self.table.columns[cid].name
            raise PlanningError(
                f"circular dependency through column [{name}]", self.element_id
            )
        if self.restrict is not None and cid not in self.restrict:
            name = self.table.columns[cid].name
            raise PlanningError(
                f"self-join target needs column [{name}] before it is "
                "computed",
                self.element_id,
            )
        self.in_progress.add(cid)
        try:
            c = self.table.columns[cid]
            for dep in sorted(c.deps):
                self._compute_column(dep)
            level = c.resident_level
            if level > 0:
                self._ensure_level(level)
            expr = self._translate(c.tree, level, agg_target=level)
            internal = self._claim(cid)
            out = self._table_name()
            vtype = c.vtype if c.vtype is not None else ValueType.NUMBER
            self.stages.append(
                st.Compute(out, self.current[level],
                           [st.ColDef(internal, expr, vtype)])
            )
            self.current[level] = out
            self.internal[cid] = internal
        finally:
            self.in_progress.discard(cid)
        self.computed.add(cid)

    def _col_at(self, cid: str, level: int) -> str:
        """Internal name of a computed column made available at ``level``."""
        self._compute_column(cid)
        r = self.table.columns[cid].resident_level
        if r == level:
            return self.internal[cid]
        if r > level:
            return self._broadcast(cid, level)
        return self._attr(self.internal[cid], r, level,
                          self.table.columns[cid].vtype or ValueType.NUMBER)

    def _broadcast(self, cid: str, level: int) -> str:
        """Bring a coarser-resident column down to a finer level through a
        null-safe join on the coarser level's effective keys."""
        key = ("bcast", cid, level)
        if key in self.memo:
            return self.memo[key]
        c = self.table.columns[cid]
        r = c.resident_level
        keys = self._eff_keys(r)
        if level == 0:
            for k in keys:
                self._ensure_key_in_base(k)
        if not keys:
            # broadcasting the single summary row: cross join
            out_col = self._temp()
            joined = self._table_name()
            self.stages.append(
                st.Join(joined, self.current[level], self.current[r], "cross",
                        [], null_safe=True,
                        right_cols=[(self.internal[cid], out_col)])
            )
            self.current[level] = joined
            self.memo[key] = out_col
            return out_col
        key_names = [self.internal[k] for k in keys]
        out_col = self._temp()
        joined = self._table_name()
        self.stages.append(
            st.Join(
                joined, self.current[level], self.current[r], "left",
                [(k, k) for k in key_names], null_safe=True,
                right_cols=[(self.internal[cid], out_col)],
            )
        )
        self.current[level] = joined
        self.memo[key] = out_col
        return out_col

    def _attr(self, internal: str, from_level: int, to_level: int,
              vtype: ValueType) -> str:
        """Automatic-ATTR: a finer non-aggregated value seen from a coarser
        level becomes Null / the value / the multi-value marker."""
        key = ("attr", internal, to_level)
        if key in self.memo:
            return self.memo[key]
        out_col = self._attach_aggregate(
            "attr", st.SCol(internal), from_level, to_level, vtype
        )
        self.memo[key] = out_col
        return out_col

    def _attach_aggregate(self, func: str, arg: Optional[st.SExpr],
                          from_level: int, to_level: int,
                          vtype: ValueType) -> str:
        self._ensure_level(to_level)
        keys = self._eff_keys(to_level)
        if from_level == 0:
            for k in keys:
                self._ensure_key_in_base(k)
        key_names = [self.internal[k] for k in keys]
        tmp = self._temp()
        grouped = self._table_name()
        self.stages.append(
            st.GroupBy(grouped, self.current[from_level], key_names,
                       [st.AggDef(tmp, func, arg, vtype)])
        )
        joined = self._table_name()
        if key_names:
            self.stages.append(
                st.Join(joined, self.current[to_level], grouped, "left",
                        [(k, k) for k in key_names], null_safe=True,
                        right_cols=[(tmp, tmp)])
            )
        else:
            self.stages.append(
                st.Join(joined, self.current[to_level], grouped, "cross",
                        [], null_safe=True, right_cols=[(tmp, tmp)])
            )
        self.current[to_level] = joined
        return tmp

    # -- expression translation ----------------------------------------------

    def _translate(self, node: fast.Node, level: int,
                   agg_target: Optional[int]) -> st.SExpr:
        if isinstance(node, fast.Literal):
            return self._literal(node)
        if isinstance(node, fast.Ref):
            return self._ref(node, level)
        if isinstance(node, fast.Unary):
            op = "not" if node.op == "not" else "-"
            return st.SUn(op, self._translate(node.operand, level, agg_target))
        if isinstance(node, fast.Binary):
            return st.SBin(
                node.op,
                self._translate(node.left, level, agg_target),
                self._translate(node.right, level, agg_target),
            )
        if isinstance(node, (fast.Lookup, fast.Rollup)):
            return st.SCol(self._lower_join(node, level))
        if isinstance(node, fast.Call):
            if node.category == AGGREGATE:
                col = self._lower_aggregate(node, level, agg_target)
                return st.SCol(col)
            if node.category == WINDOW:
                return st.SCol(self._lower_window(node, level))
            args = tuple(
                self._translate(a, level, agg_target) for a in node.args
            )
            return st.SFunc(_SCALAR_FUNCS[node.name], args)
        raise PlanningError(f"cannot lower node {node!r}", self.element_id)

    def _literal(self, node: fast.Literal) -> st.SExpr:
        v = node.value
        if isinstance(v, bool):
            return st.SLit(1 if v else 0)
        if isinstance(v, str) and node.vtype is ValueType.DATE:
            parsed = parse_date_text(v)
            return st.SLit(parsed if parsed is not None else v)
        return st.SLit(v)

    def _ref(self, node: fast.Ref, level: int) -> st.SExpr:
        if node.kind == "control":
            _vt, value = self.table.controls[node.name]
            return st.SLit(value)
        cid = self.table.name_to_cid.get(node.name)
        if cid is not None:
            return st.SCol(self._col_at(cid, level))
        # source column (resident at base)
        internal = self.source_internal.get(node.name)
        if internal is None:
            raise PlanningError(
                f"unknown column [{node.name}]", self.element_id
            )
        if level == 0:
            return st.SCol(internal)
        return st.SCol(
            self._attr(internal, 0, level, node.vtype or ValueType.NUMBER)
        )

    def _residency(self, name: str) -> Optional[int]:
        cid = self.table.name_to_cid.get(name)
        if cid is not None:
            return self.table.columns[cid].resident_level
        if name in self.table.controls:
            return None
        return 0

    def _lower_aggregate(self, call: fast.Call, level: int,
                         agg_target: Optional[int]) -> str:
        from .resolve import aggregate_arg_level

        nlevels = len(self.table.levels)
        if agg_target is None:
            target = self._natural_level(call)
        else:
            target = agg_target
        arg_level = aggregate_arg_level(call, target, self._residency, nlevels)
        func = _AGG_FUNCS[call.name]
        vtype = call.vtype or ValueType.NUMBER
        if func == "count" and not call.args:
            arg_expr: Optional[st.SExpr] = None
        else:
            arg = call.args[0]
            self._ensure_level_chain(arg_level)
            arg_expr = self._translate(arg, arg_level, agg_target=target - 1)
        tmp = self._attach_aggregate(func, arg_expr, arg_level, target, vtype)
        if target == level:
            return tmp
        # aggregate landed coarser than the usage context: broadcast down
        return self._broadcast_temp(tmp, target, level, vtype)

    def _natural_level(self, call: fast.Call) -> int:
        a = 10**9
        for arg in call.args:
            a = min(a, self._natural_arg(arg))
        return (0 if a >= 10**9 else a) + 1

    def _natural_arg(self, node: fast.Node) -> int:
        a = 10**9
        if isinstance(node, fast.Ref):
            r = self._residency(node.name)
            if r is not None:
                a = r
        elif isinstance(node, fast.Call) and node.category == AGGREGATE:
            a = self._natural_level(node)
        elif isinstance(node, fast.Unary):
            a = self._natural_arg(node.operand)
        elif isinstance(node, fast.Binary):
            a = min(self._natural_arg(node.left), self._natural_arg(node.right))
        elif isinstance(node, fast.Call):
            for x in node.args:
                a = min(a, self._natural_arg(x))
        return a

    def _ensure_level_chain(self, level: int) -> None:
        if level > 0:
            self._ensure_level(level)

    def _broadcast_temp(self, internal: str, from_level: int, to_level: int,
                        vtype: ValueType) -> str:
        keys = self._eff_keys(from_level)
        if to_level == 0:
            for k in keys:
                self._ensure_key_in_base(k)
        key_names = [self.internal[k] for k in keys]
        out_col = self._temp()
        joined = self._table_name()
        if key_names:
            self.stages.append(
                st.Join(joined, self.current[to_level], self.current[from_level],
                        "left", [(k, k) for k in key_names], null_safe=True,
                        right_cols=[(internal, out_col)])
            )
        else:
            self.stages.append(
                st.Join(joined, self.current[to_level], self.current[from_level],
                        "cross", [], null_safe=True,
                        right_cols=[(internal, out_col)])
            )
        self.current[to_level] = joined
        return out_col

    def _lower_window(self, call: fast.Call, level: int) -> str:
        nlevels = len(self.table.levels)
        if level >= nlevels - 1:
            raise PlanningError(
                f"window function {call.name} at the summary level",
                self.element_id,
            )
        func = _WINDOW_FUNCS[call.name]
        partition_keys = self._eff_keys(level + 1)
        for k in partition_keys:
            self._compute_column(k)
            if level == 0:
                self._ensure_key_in_base(k)
        partition = [self.internal[k] for k in partition_keys]
        order = self._level_order(level, include_tiebreak=(func != "rank"))

        arg_col: Optional[str] = None
        param: Optional[int] = None
        if call.args:
            expr = self._translate(call.args[0], level, agg_target=level)
            if isinstance(expr, st.SCol):
                arg_col = expr.name
            else:
                arg_col = self._temp()
                out = self._table_name()
                self.stages.append(
                    st.Compute(out, self.current[level],
                               [st.ColDef(arg_col, expr,
                                          call.args[0].vtype or ValueType.NUMBER)])
                )
                self.current[level] = out
            if len(call.args) > 1:
                lit = call.args[1]
                assert isinstance(lit, fast.Literal)
                param = int(lit.value)  # validated positive literal
            elif func in ("lag", "lead"):
                param = 1

        tmp = self._temp()
        out = self._table_name()
        self.stages.append(
            st.Window(out, self.current[level], [
                st.WindowDef(tmp, func, arg_col, param, partition, order,
                             call.vtype or ValueType.NUMBER)
            ])
        )
        self.current[level] = out
        return tmp

    def _column_order(self) -> list[str]:
        """Topological column order, with filter prerequisites first.

        Running the transitive dependencies of every filter before other
        columns lets each filter apply as early as its references allow, so
        a coarser level's group table is never built from rows a
        finer-level filter would still remove.  Both partitions preserve
        topological order, and the prerequisite set is closed under
        dependencies, so the whole sequence stays topological.
        """
        order = [
            cid for cid in self.table.topo_order
            if self.restrict is None or cid in self.restrict
        ]
        needed: set[str] = set()
        frontier: set[str] = set()
        for f in self.table.filters:
            frontier |= f.deps
        while frontier:
            cid = frontier.pop()
            if cid in needed or cid not in self.table.columns:
                continue
            needed.add(cid)
            frontier |= self.table.columns[cid].deps
        return ([c for c in order if c in needed]
                + [c for c in order if c not in needed])

    def _level_order(self, level: int, include_tiebreak: bool = True
                     ) -> list[st.OrderItem]:
        items: list[st.OrderItem] = []
        for cid, direction in self.table.levels[level].ordering:
            items.append(st.OrderItem(self._col_at(cid, level), direction))
        if include_tiebreak:
            items.append(st.OrderItem(ORD, "asc"))
        return items

    # -- remote joins ----------------------------------------------------------

    def _lower_join(self, node: fast.Lookup | fast.Rollup, level: int) -> str:
        eid = self._join_element(node)
        plan = self._element_plan(eid)
        scan = self._table_name()
        self.stages.append(
            st.Scan(scan, st.SubplanScan(eid, plan, plan.fingerprint()))
        )
        remote_types = dict(plan.schema)

        remote_keys = [p.remote.name for p in node.pairs]
        for rk in remote_keys:
            if rk not in remote_types:
                raise PlanningError(
                    f"element {eid!r} has no column [{rk}]", self.element_id
                )

        # pre-aggregate the target by the remote key columns
        if isinstance(node, fast.Lookup):
            target_expr = self._remote_expr(node.target, remote_types, eid)
            aggs = [st.AggDef("v0", "attr", target_expr,
                              node.vtype or ValueType.NUMBER)]
            result_expr: st.SExpr = st.SCol("v0")
        else:
            aggs = []

            def collect(n: fast.Node) -> st.SExpr:
                if isinstance(n, fast.Call) and n.category == AGGREGATE:
                    name = f"v{len(aggs)}"
                    if n.name == "Count" and not n.args:
                        arg = None
                    else:
                        arg = self._remote_expr(n.args[0], remote_types, eid)
                    aggs.append(
                        st.AggDef(name, _AGG_FUNCS[n.name], arg,
                                  n.vtype or ValueType.NUMBER)
                    )
                    return st.SCol(name)
                if isinstance(n, fast.Literal):
                    return self._literal(n)
                if isinstance(n, fast.Unary):
                    return st.SUn("not" if n.op == "not" else "-", collect(n.operand))
                if isinstance(n, fast.Binary):
                    return st.SBin(n.op, collect(n.left), collect(n.right))
                if isinstance(n, fast.Call):
                    return st.SFunc(
                        _SCALAR_FUNCS[n.name],
                        tuple(collect(a) for a in n.args),
                    )
                raise PlanningError(
                    f"unsupported Rollup target {n!r}", self.element_id
                )

            result_expr = collect(node.target)

        grouped = self._table_name()
        self.stages.append(
            st.GroupBy(grouped, scan, remote_keys, aggs)
        )
        if not (isinstance(result_expr, st.SCol)
                and any(a.name == result_expr.name for a in aggs)):
            computed = self._table_name()
            final_col = self._temp()
            self.stages.append(
                st.Compute(computed, grouped,
                           [st.ColDef(final_col, result_expr,
                                      node.vtype or ValueType.NUMBER)],
                           keep=remote_keys + [final_col])
            )
            grouped = computed
            result_name = final_col
        else:
            result_name = result_expr.name

        # local key expressions, materialized when not plain columns
        local_names: list[str] = []
        for p in node.pairs:
            expr = self._translate(p.local, level, agg_target=level)
            if isinstance(expr, st.SCol):
                local_names.append(expr.name)
            else:
                tmp = self._temp()
                out = self._table_name()
                self.stages.append(
                    st.Compute(out, self.current[level],
                               [st.ColDef(tmp, expr,
                                          p.local.vtype or ValueType.NUMBER)])
                )
                self.current[level] = out
                local_names.append(tmp)

        out_col = self._temp()
        joined = self._table_name()
        self.stages.append(
            st.Join(
                joined, self.current[level], grouped, "left",
                list(zip(local_names, remote_keys)), null_safe=False,
                right_cols=[(result_name, out_col)],
            )
        )
        self.current[level] = joined
        return out_col

    def _join_element(self, node: fast.Lookup | fast.Rollup) -> str:
        for p in node.pairs:
            return p.remote.element
        raise PlanningError("join without key pairs", self.element_id)

    def _remote_expr(self, node: fast.Node, remote_types: dict[str, ValueType],
                     eid: str) -> st.SExpr:
        if isinstance(node, fast.PathRef):
            if node.name not in remote_types:
                raise PlanningError(
                    f"element {eid!r} has no column [{node.name}]",
                    self.element_id,
                )
            return st.SCol(node.name)
        if isinstance(node, fast.Literal):
            return self._literal(node)
        if isinstance(node, fast.Unary):
            return st.SUn("not" if node.op == "not" else "-",
                          self._remote_expr(node.operand, remote_types, eid))
        if isinstance(node, fast.Binary):
            return st.SBin(node.op,
                           self._remote_expr(node.left, remote_types, eid),
                           self._remote_expr(node.right, remote_types, eid))
        if isinstance(node, fast.Call) and node.category not in (AGGREGATE, WINDOW):
            return st.SFunc(
                _SCALAR_FUNCS[node.name],
                tuple(self._remote_expr(a, remote_types, eid) for a in node.args),
            )
        raise PlanningError(
            f"unsupported expression in join target: {node!r}", self.element_id
        )

    # -- filters ---------------------------------------------------------------

    def _apply_ready_filters(self) -> None:
        remaining: list[ResolvedFilter] = []
        for f in self.pending_filters:
            if f.deps <= self.computed:
                self._apply_filter(f)
            else:
                remaining.append(f)
        self.pending_filters = remaining

    def _apply_filter(self, f: ResolvedFilter) -> None:
        self._ensure_level(f.level)
        pred = self._filter_predicate(f)
        out = self._table_name()
        self.stages.append(st.Filter(out, self.current[f.level], pred))
        self.current[f.level] = out
        self._semi_join_descendants(f.level)
        self.applied_filters.append(f)
        self.filter_stage_levels.append(f.level)

    def _semi_join_descendants(self, level: int) -> None:
        if level == 0:
            return
        keys = self._eff_keys(level)
        key_names = [self.internal[k] for k in keys]
        for finer in sorted(self.current):
            if finer >= level:
                continue
            if not key_names:
                # summary-level filter: keep rows only if the one summary
                # row survived
                joined = self._table_name()
                self.stages.append(
                    st.Join(joined, self.current[finer], self.current[level],
                            "semi", [], null_safe=True)
                )
                self.current[finer] = joined
                continue
            joined = self._table_name()
            self.stages.append(
                st.Join(joined, self.current[finer], self.current[level],
                        "semi", [(k, k) for k in key_names], null_safe=True)
            )
            self.current[finer] = joined

    def _filter_predicate(self, f: ResolvedFilter) -> st.SExpr:
        spec = f.spec
        if spec.kind == "expression":
            assert f.tree is not None
            return self._translate(f.tree, f.level, agg_target=None)
        cid = spec.target or ""
        col = self.table.columns[cid]
        vtype = col.vtype or ValueType.NUMBER
        x = st.SCol(self._col_at(cid, f.level))
        if spec.kind == "include-list":
            return st.SFunc("inlist", (x,) + self._lits(spec.values, vtype))
        if spec.kind == "exclude-list":
            return st.SFunc("notinlist", (x,) + self._lits(spec.values, vtype))
        if spec.kind == "range":
            parts: list[st.SExpr] = []
            if spec.low is not None:
                parts.append(st.SBin(">=", x, self._lit(spec.low, vtype)))
            if spec.high is not None:
                parts.append(st.SBin("<=", x, self._lit(spec.high, vtype)))
            if not parts:
                return st.SLit(1)
            pred = parts[0]
            for p in parts[1:]:
                pred = st.SBin("and", pred, p)
            return pred
        if spec.kind == "text-match":
            return st.SFunc("like", (x, st.SLit(spec.pattern or "%")))
        if spec.kind == "top-n":
            by_cid = spec.by or cid
            by = st.SCol(self._col_at(by_cid, f.level))
            assert isinstance(by, st.SCol)
            direction = "desc" if spec.direction != "asc" else "asc"
            rank = self._temp()
            out = self._table_name()
            self.stages.append(
                st.Window(out, self.current[f.level], [
                    st.WindowDef(rank, "row_number", None, None, [],
                                 [st.OrderItem(by.name, direction),
                                  st.OrderItem(ORD, "asc")],
                                 ValueType.NUMBER)
                ])
            )
            self.current[f.level] = out
            return st.SBin("<=", st.SCol(rank), st.SLit(int(spec.n or 0)))
        raise PlanningError(
            f"unknown filter kind {spec.kind!r}", self.element_id
        )

    def _lits(self, values, vtype: ValueType) -> tuple[st.SExpr, ...]:
        return tuple(self._lit(v, vtype) for v in values)

    def _lit(self, value, vtype: ValueType) -> st.SLit:
        try:
            return st.SLit(json_to_storage(value, vtype))
        except (TypeError, ValueError) as exc:
            raise PlanningError(f"bad filter value {value!r}: {exc}",
                                self.element_id)

    # -- projection ------------------------------------------------------------

    def _projection(self, output_level: int):
        proj: list[tuple[str, str, ValueType]] = []
        visible: list[str] = []
        if output_level == 0:
            # defined columns shadow case-equal source passthroughs: SQL
            # identifiers are case-insensitive
            shadowed = {
                c.name.casefold() for c in self.table.columns.values()
            }
            for name, vtype in self.table.source_schema or []:
                if name.casefold() in shadowed:
                    continue
                proj.append((self.source_internal[name], name, vtype))
                visible.append(name)
        body = self._body()
        for cid in body.columns:
            if self.restrict is not None and cid not in self.restrict:
                continue
            c = self.table.columns[cid]
            if c.hidden or c.resident_level < output_level:
                continue
            internal = self._col_at(cid, output_level)
            vtype = c.vtype if c.vtype is not None else ValueType.NUMBER
            proj.append((internal, c.name, vtype))
            visible.append(c.name)
        keys = [
            self.table.columns[k].name
            for k in self._eff_keys(output_level)
            if not self.table.columns[k].hidden
        ]
        schema = [(display, vtype) for _i, display, vtype in proj]
        return proj, schema, visible, keys

    def _display_order(self, output_level: int) -> list[st.OrderItem]:
        items: list[st.OrderItem] = []
        n = len(self.table.levels)
        for level in range(n - 2, output_level - 1, -1):
            if level <= 0:
                continue
            for cid, direction in self.table.levels[level].ordering:
                items.append(
                    st.OrderItem(self._col_at(cid, output_level), direction)
                )
        for cid, direction in self.table.levels[output_level].ordering:
            items.append(
                st.OrderItem(self._col_at(cid, output_level), direction)
            )
        items.append(st.OrderItem(ORD, "asc"))
        # drop duplicate keys, keeping the first occurrence
        seen: set[str] = set()
        out: list[st.OrderItem] = []
        for it in items:
            if it.col in seen:
                continue
            seen.add(it.col)
            out.append(it)
        return out


def lower_to_plan(resolver: Resolver, provider: PlanProvider,
                  element_id: str, state: Optional[ExpansionState] = None
                  ) -> st.Plan:
    """Lower one table element to a logical plan under the given state."""
    lw = _Lowerer(resolver, provider, element_id, subplans={})
    return lw.lower(state or ExpansionState())


def lower_output_plan(resolver: Resolver, provider: PlanProvider,
                      element_id: str) -> st.Plan:
    """The element's external output (element-ref sources, remote joins)."""
    lw = _Lowerer(resolver, provider, element_id, subplans={})
    return lw.lower_output()
