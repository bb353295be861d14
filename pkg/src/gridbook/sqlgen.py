"""SQL generation: compile a logical plan to a single SELECT statement.

One common-table-expression per plan stage, targeting the embedded engine's
dialect.  The trailing display stages (Sort -> Project -> optional Page)
are folded into the final SELECT, because ordering inside a CTE would not
survive into the outer statement.  Compilation is pure and deterministic:
identical plans produce byte-identical SQL.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .plan import stages as st
from .values import MULTIVALUE_TOKEN

ORD = st.ORD


class SqlGenError(Exception):
    pass


@dataclass(frozen=True)
class SqlQuery:
    text: str
    query_id: str  # plan fingerprint: lowercase hex, 64 chars
    columns: list[tuple[str, str]]  # (name, value type) of the result


def _scanned_tables(plan: st.Plan) -> set[str]:
    names: set[str] = set()
    for stage in plan.stages:
        if isinstance(stage, st.Scan):
            if isinstance(stage.source, st.TableScan):
                names.add(stage.source.table)
            else:
                names |= _scanned_tables(stage.source.plan)
    return names


def compile_plan(plan: st.Plan) -> SqlQuery:
    text = _Emitter().compile(plan)
    return SqlQuery(
        text=text,
        query_id=plan.fingerprint(),
        columns=[(n, str(t)) for n, t in plan.schema],
    )


# ---------------------------------------------------------------------------
# Materialized-view substitution


@dataclass(frozen=True)
class Materialization:
    """A refreshed copy of an element's output stored as a warehouse table."""

    element_id: str
    fingerprint: str  # the element output plan's fingerprint at refresh time
    table: str
    version: str  # version token of the materialized table


class MaterializationRegistry:
    """Current materializations by element id.

    An entry is *current* for a plan when the plan's embedded subplan
    fingerprint matches the fingerprint captured at refresh time; any edit
    to the element, its sources, or its upstream elements changes that
    fingerprint and silently disables substitution until the next refresh.
    """

    def __init__(self) -> None:
        self._by_element: dict[str, Materialization] = {}

    def register(self, mat: Materialization) -> None:
        self._by_element[mat.element_id] = mat

    def get(self, element_id: str) -> Materialization | None:
        return self._by_element.get(element_id)

    def remove(self, element_id: str) -> None:
        self._by_element.pop(element_id, None)

    def entries(self) -> list[Materialization]:
        return sorted(self._by_element.values(), key=lambda m: m.element_id)


def substitute_materializations(plan: st.Plan,
                                registry: MaterializationRegistry) -> st.Plan:
    """Rewrite element-ref scans whose materialization is current into plain
    table scans.  Stale entries are ignored; everything else is shared
    structurally (stages are treated as immutable)."""
    changed = False
    stages: list[st.Stage] = []
    for stage in plan.stages:
        if isinstance(stage, st.Scan) and isinstance(stage.source,
                                                     st.SubplanScan):
            sub = stage.source
            mat = registry.get(sub.element_id)
            if mat is not None and mat.fingerprint == sub.fingerprint:
                # the stored table holds the subplan's output columns in
                # output order, minus the ordinal, which the scan
                # re-synthesizes from physical order
                cols = [
                    (n, n, t) for n, t in sub.plan.schema if n != st.ORD
                ]
                stages.append(st.Scan(
                    stage.out, st.TableScan(mat.table, mat.version, cols)
                ))
                changed = True
                continue
            inner = substitute_materializations(sub.plan, registry)
            if inner is not sub.plan:
                stages.append(st.Scan(stage.out, st.SubplanScan(
                    sub.element_id, inner, sub.fingerprint
                )))
                changed = True
                continue
        stages.append(stage)
    if not changed:
        return plan
    return st.Plan(stages, plan.output, list(plan.schema), plan.meta)


# ---------------------------------------------------------------------------
# Identifiers and literals


def q(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def lit_text(s: str) -> str:
    return "'" + s.replace("'", "''") + "'"


def lit(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return "NULL"
        return repr(value)
    return lit_text(value)


# ---------------------------------------------------------------------------


class _Emitter:
    def __init__(self) -> None:
        self.ctes: list[tuple[str, str]] = []
        self.cols: dict[str, list[str]] = {}  # cte name -> column order
        self.counter = 0
        self.subplan_outs: dict[str, str] = {}  # subplan fingerprint -> cte
        self.prefix = "s"

    def compile(self, plan: st.Plan) -> str:
        # CTE names must not collide with scanned tables (SQL identifiers
        # are case-insensitive): a CTE named like its own source table
        # becomes a circular reference
        taken = {t.casefold() for t in _scanned_tables(plan)}
        while any(re.fullmatch(rf"{self.prefix}\d+", t) for t in taken):
            self.prefix = "_" + self.prefix
        final = self._final_select(plan, self._emit_stages(plan, {}))
        if not self.ctes:
            return final
        with_part = ",\n".join(
            f"{name} AS ({sql})" for name, sql in self.ctes
        )
        return f"WITH {with_part}\n{final}"

    # -- plan walking --------------------------------------------------------

    def _emit_stages(self, plan: st.Plan, scope: dict[str, str]) -> dict:
        """Emit CTEs for every stage except the foldable display tail.
        Returns the scope mapping plan table names to CTE names."""
        body = plan.stages[:len(plan.stages) - self._tail_len(plan)]
        for stage in body:
            self._emit(stage, scope)
        return scope

    @staticmethod
    def _tail_len(plan: st.Plan) -> int:
        """Number of trailing stages folded into the final SELECT."""
        s = plan.stages
        k = len(s)
        if k >= 3 and isinstance(s[-1], st.Page) \
                and isinstance(s[-2], st.Project) and isinstance(s[-3], st.Sort):
            return 3
        if k >= 2 and isinstance(s[-1], st.Project) \
                and isinstance(s[-2], st.Sort):
            return 2
        if isinstance(s[-1], st.Project):
            return 1
        return 0

    def _final_select(self, plan: st.Plan, scope: dict[str, str]) -> str:
        tail = plan.stages[len(plan.stages) - self._tail_len(plan):]
        if not tail:  # raw plan without display projection
            name = scope[plan.output]
            return f"SELECT {self._col_list(name)} FROM {name}"
        proj = next(s for s in tail if isinstance(s, st.Project))
        select = ", ".join(
            f"{q(src)} AS {q(dst)}" if src != dst else q(src)
            for src, dst, _t in proj.cols
        )
        sort = next((s for s in tail if isinstance(s, st.Sort)), None)
        if sort is not None:
            frm = scope[sort.input]
            order = self._order_sql(sort.order)
        else:
            frm = scope[proj.input]
            names = [dst for _s, dst, _t in proj.cols]
            order = q(ORD) + " ASC NULLS LAST" if ORD in names else ""
        text = f"SELECT {select} FROM {frm}"
        if order:
            text += f" ORDER BY {order}"
        page = next((s for s in tail if isinstance(s, st.Page)), None)
        if page is not None:
            text += f" LIMIT {page.limit} OFFSET {page.offset}"
        return text

    # -- stage emission ------------------------------------------------------

    def _fresh(self, columns: list[str]) -> str:
        name = f"{self.prefix}{self.counter}"
        self.counter += 1
        self.cols[name] = columns
        return name

    def _add(self, columns: list[str], sql: str) -> str:
        name = self._fresh(columns)
        self.ctes.append((name, sql))
        return name

    def _col_list(self, cte: str, prefix: str = "") -> str:
        p = f"{prefix}." if prefix else ""
        return ", ".join(p + q(c) for c in self.cols[cte])

    def _emit(self, stage: st.Stage, scope: dict[str, str]) -> None:
        if isinstance(stage, st.Scan):
            scope[stage.out] = self._emit_scan(stage)
        elif isinstance(stage, st.Compute):
            scope[stage.out] = self._emit_compute(stage, scope)
        elif isinstance(stage, st.GroupBy):
            scope[stage.out] = self._emit_group(stage, scope)
        elif isinstance(stage, st.Window):
            scope[stage.out] = self._emit_window(stage, scope)
        elif isinstance(stage, st.Join):
            scope[stage.out] = self._emit_join(stage, scope)
        elif isinstance(stage, st.UnionAll):
            scope[stage.out] = self._emit_union(stage, scope)
        elif isinstance(stage, st.Renumber):
            scope[stage.out] = self._emit_renumber(stage, scope)
        elif isinstance(stage, st.Filter):
            src = scope[stage.input]
            scope[stage.out] = self._add(
                list(self.cols[src]),
                f"SELECT {self._col_list(src)} FROM {src} "
                f"WHERE {self.expr(stage.predicate)}",
            )
        elif isinstance(stage, st.Project):
            src = scope[stage.input]
            select = ", ".join(
                f"{q(s)} AS {q(d)}" if s != d else q(s)
                for s, d, _t in stage.cols
            )
            scope[stage.out] = self._add(
                [d for _s, d, _t in stage.cols],
                f"SELECT {select} FROM {src}",
            )
        elif isinstance(stage, st.Sort):
            # row order inside a CTE is not preserved; ordering is carried
            # by Renumber ordinals and the final SELECT instead
            src = scope[stage.input]
            scope[stage.out] = self._add(
                list(self.cols[src]),
                f"SELECT {self._col_list(src)} FROM {src}",
            )
        elif isinstance(stage, st.Page):
            src = scope[stage.input]
            scope[stage.out] = self._add(
                list(self.cols[src]),
                f"SELECT {self._col_list(src)} FROM {src} "
                f"ORDER BY {q(ORD)} ASC NULLS LAST "
                f"LIMIT {stage.limit} OFFSET {stage.offset}",
            )
        else:
            raise SqlGenError(f"unknown stage {stage!r}")

    def _emit_scan(self, stage: st.Scan) -> str:
        src = stage.source
        if isinstance(src, st.SubplanScan):
            key = src.fingerprint
            if key not in self.subplan_outs:
                sub_scope = self._emit_stages(src.plan, {})
                tail = src.plan.stages[
                    len(src.plan.stages) - self._tail_len(src.plan):
                ]
                proj = next(
                    (s for s in tail if isinstance(s, st.Project)), None
                )
                if proj is not None:
                    # materialize the folded display tail as a CTE; order
                    # is irrelevant here because consumers renumber by _ord
                    frm = sub_scope[
                        next(
                            (s.input for s in tail if isinstance(s, st.Sort)),
                            proj.input,
                        )
                    ]
                    select = ", ".join(
                        f"{q(s)} AS {q(d)}" if s != d else q(s)
                        for s, d, _t in proj.cols
                    )
                    out = self._add(
                        [d for _s, d, _t in proj.cols],
                        f"SELECT {select} FROM {frm}",
                    )
                else:
                    out = sub_scope[src.plan.output]
                self.subplan_outs[key] = out
            return self.subplan_outs[key]
        select = ", ".join(
            f"{q(a)} AS {q(b)}" if a != b else q(a)
            for a, b, _t in src.columns
        )
        return self._add(
            [b for _a, b, _t in src.columns] + [ORD],
            f"SELECT {select}, "
            f"row_number() OVER (ORDER BY rowid) AS {q(ORD)} "
            f"FROM {q(src.table)}",
        )

    def _emit_compute(self, stage: st.Compute, scope: dict[str, str]) -> str:
        src = scope[stage.input]
        keep = stage.keep if stage.keep is not None else self.cols[src]
        parts = [q(c) for c in keep]
        parts += [f"{self.expr(d.expr)} AS {q(d.name)}" for d in stage.defs]
        return self._add(
            list(keep) + [d.name for d in stage.defs],
            f"SELECT {', '.join(parts)} FROM {src}",
        )

    def _emit_group(self, stage: st.GroupBy, scope: dict[str, str]) -> str:
        src = scope[stage.input]
        parts = [q(k) for k in stage.keys]
        for a in stage.aggs:
            parts.append(f"{self._agg_sql(a)} AS {q(a.name)}")
        sql = f"SELECT {', '.join(parts)} FROM {src}"
        if stage.keys:
            sql += " GROUP BY " + ", ".join(q(k) for k in stage.keys)
        return self._add(
            list(stage.keys) + [a.name for a in stage.aggs], sql
        )

    def _agg_sql(self, a: st.AggDef) -> str:
        e = self.expr(a.arg) if a.arg is not None else None
        if a.func == "count":
            return f"count({e})" if e is not None else "count(*)"
        if a.func == "count_if":
            return f"count(CASE WHEN {e} THEN 1 END)"
        if a.func == "count_distinct":
            return f"count(DISTINCT {e})"
        if a.func in ("sum", "avg", "min", "max"):
            return f"{a.func}({e})"
        if a.func == "attr":
            tok = lit_text(MULTIVALUE_TOKEN)
            return (
                f"CASE WHEN count({e}) = 0 THEN NULL "
                f"WHEN min({e}) = max({e}) THEN min({e}) ELSE {tok} END"
            )
        raise SqlGenError(f"unknown aggregate {a.func!r}")

    def _order_sql(self, order: list[st.OrderItem]) -> str:
        return ", ".join(
            f"{q(o.col)} {o.direction.upper()} NULLS LAST" for o in order
        )

    def _over(self, d: st.WindowDef, frame: str = "") -> str:
        parts = []
        if d.partition:
            parts.append(
                "PARTITION BY " + ", ".join(q(p) for p in d.partition)
            )
        if d.order:
            parts.append("ORDER BY " + self._order_sql(d.order))
        if frame:
            parts.append(frame)
        return "(" + " ".join(parts) + ")"

    def _emit_window(self, stage: st.Window, scope: dict[str, str]) -> str:
        cur = scope[stage.input]
        for d in stage.defs:
            cur = self._emit_window_def(d, cur)
        return cur

    def _emit_window_def(self, d: st.WindowDef, src: str) -> str:
        cols = list(self.cols[src])
        arg = q(d.arg) if d.arg is not None else None
        if d.func in ("lag", "lead"):
            w = f"{d.func}({arg}, {d.param or 1}) OVER {self._over(d)}"
        elif d.func in ("rank", "row_number"):
            w = f"{d.func}() OVER {self._over(d)}"
        elif d.func == "moving_average":
            frame = (
                f"ROWS BETWEEN {max(0, (d.param or 1) - 1)} PRECEDING "
                "AND CURRENT ROW"
            )
            w = f"avg({arg}) OVER {self._over(d, frame)}"
        elif d.func == "cumulative_sum":
            frame = "ROWS BETWEEN UNBOUNDED PRECEDING AND CURRENT ROW"
            w = f"sum({arg}) OVER {self._over(d, frame)}"
        elif d.func == "fill_down":
            return self._emit_fill_down(d, src)
        else:
            raise SqlGenError(f"unknown window function {d.func!r}")
        return self._add(
            cols + [d.name],
            f"SELECT {self._col_list(src)}, {w} AS {q(d.name)} FROM {src}",
        )

    def _emit_fill_down(self, d: st.WindowDef, src: str) -> str:
        # segment = count of non-nulls so far; each segment starts at its
        # leader row, whose value max() then spreads over the segment
        cols = list(self.cols[src])
        seg = d.name + "__seg"
        arg = q(d.arg)
        frame = "ROWS BETWEEN UNBOUNDED PRECEDING AND CURRENT ROW"
        marked = self._add(
            cols + [seg],
            f"SELECT {self._col_list(src)}, "
            f"count({arg}) OVER {self._over(d, frame)} AS {q(seg)} "
            f"FROM {src}",
        )
        by = ", ".join(q(p) for p in list(d.partition) + [seg])
        return self._add(
            cols + [d.name],
            f"SELECT {', '.join(q(c) for c in cols)}, "
            f"max({arg}) OVER (PARTITION BY {by}) AS {q(d.name)} "
            f"FROM {marked}",
        )

    def _emit_join(self, stage: st.Join, scope: dict[str, str]) -> str:
        left, right = scope[stage.left], scope[stage.right]
        op = " IS " if stage.null_safe else " = "
        conds = " AND ".join(
            f"l.{q(a)}{op}r.{q(b)}" for a, b in stage.on
        )
        if stage.kind == "semi":
            where = f"WHERE EXISTS (SELECT 1 FROM {right} r" \
                + (f" WHERE {conds})" if conds else ")")
            return self._add(
                list(self.cols[left]),
                f"SELECT {self._col_list(left, 'l')} FROM {left} l {where}",
            )
        select = self._col_list(left, "l")
        for rname, oname in stage.right_cols:
            select += f", r.{q(rname)} AS {q(oname)}"
        if stage.kind == "cross":
            join = f"CROSS JOIN {right} r"
        else:
            kw = "LEFT JOIN" if stage.kind == "left" else "JOIN"
            join = f"{kw} {right} r ON {conds or '1'}"
        return self._add(
            list(self.cols[left]) + [o for _r, o in stage.right_cols],
            f"SELECT {select} FROM {left} l {join}",
        )

    def _emit_union(self, stage: st.UnionAll, scope: dict[str, str]) -> str:
        left, right = scope[stage.left], scope[stage.right]
        lsel = ", ".join(q(a) for a, _b in stage.cols)
        rsel = ", ".join(q(b) for _a, b in stage.cols)
        return self._add(
            [a for a, _b in stage.cols],
            f"SELECT {lsel} FROM {left} "
            f"UNION ALL SELECT {rsel} FROM {right}",
        )

    def _emit_renumber(self, stage: st.Renumber, scope: dict[str, str]) -> str:
        src = scope[stage.input]
        keep = [
            c for c in self.cols[src]
            if c not in stage.drop and c != ORD
        ]
        order = self._order_sql(stage.order) or q(self.cols[src][0])
        sel = ", ".join(q(c) for c in keep)
        return self._add(
            keep + [ORD],
            f"SELECT {sel}, row_number() OVER (ORDER BY {order}) "
            f"AS {q(ORD)} FROM {src}",
        )

    # -- scalar expressions --------------------------------------------------

    def expr(self, e: st.SExpr) -> str:
        if isinstance(e, st.SLit):
            return lit(e.value)
        if isinstance(e, st.SCol):
            return q(e.name)
        if isinstance(e, st.SUn):
            a = self.expr(e.a)
            return f"-({a})" if e.op == "-" else f"NOT ({a})"
        if isinstance(e, st.SBin):
            return self._bin(e)
        if isinstance(e, st.SFunc):
            return self._func(e)
        raise SqlGenError(f"unknown expression {e!r}")

    def _bin(self, e: st.SBin) -> str:
        a, b = self.expr(e.a), self.expr(e.b)
        if e.op == "/":
            return f"(CAST({a} AS REAL) / NULLIF(CAST({b} AS REAL), 0.0))"
        if e.op == "&":
            return f"({a} || {b})"
        op = {"and": "AND", "or": "OR"}.get(e.op, e.op)
        return f"({a} {op} {b})"

    def _func(self, e: st.SFunc) -> str:
        args = [self.expr(a) for a in e.args]
        name = e.name
        if name == "if":
            return f"CASE WHEN {args[0]} THEN {args[1]} ELSE {args[2]} END"
        if name == "coalesce":
            return args[0] if len(args) == 1 else f"coalesce({', '.join(args)})"
        if name == "abs":
            return f"abs({args[0]})"
        if name == "round":
            return f"round({', '.join(args)})"
        if name == "concat":
            return "('' || " + " || ".join(args) + ")"
        if name in ("lower", "upper"):
            return f"{name}(CAST({args[0]} AS TEXT))"
        if name == "year":
            return self._date_part(args[0], 1, 4)
        if name == "month":
            return self._date_part(args[0], 6, 2)
        if name == "datetrunc":
            return self._date_trunc(e)
        if name == "datediff":
            return self._date_diff(e)
        if name == "like":
            return f"({args[0]} LIKE {args[1]})"
        if name in ("inlist", "notinlist"):
            x, items = args[0], args[1:]
            if not items:
                return "0" if name == "inlist" else "1"
            op = "IN" if name == "inlist" else "NOT IN"
            return f"({x} {op} ({', '.join(items)}))"
        raise SqlGenError(f"unknown function {name!r}")

    @staticmethod
    def _txt(a: str) -> str:
        return f"CAST({a} AS TEXT)"

    def _date_part(self, a: str, start: int, width: int) -> str:
        t = self._txt(a)
        need = start + width - 1
        return (
            f"CASE WHEN {a} IS NULL OR length({t}) < {need} THEN NULL "
            f"ELSE CAST(substr({t}, {start}, {width}) AS INTEGER) END"
        )

    def _unit_of(self, e: st.SExpr) -> str | None:
        if isinstance(e, st.SLit) and isinstance(e.value, str):
            return e.value.lower()
        return None

    def _date_trunc(self, e: st.SFunc) -> str:
        u, d = self.expr(e.args[0]), self.expr(e.args[1])
        t = self._txt(d)
        branches = {
            "year": f"substr({t}, 1, 4) || '-01-01 00:00:00.000000'",
            "quarter": (
                f"substr({t}, 1, 4) || printf('-%02d-01 00:00:00.000000', "
                f"((CAST(substr({t}, 6, 2) AS INTEGER) - 1) / 3) * 3 + 1)"
            ),
            "month": f"substr({t}, 1, 7) || '-01 00:00:00.000000'",
            "day": f"substr({t}, 1, 10) || ' 00:00:00.000000'",
            "hour": f"substr({t}, 1, 13) || ':00:00.000000'",
        }
        guard = f"{d} IS NULL OR {u} IS NULL OR length({t}) < 13"
        unit = self._unit_of(e.args[0])
        if unit is not None:
            body = branches.get(unit, "NULL")
            return f"CASE WHEN {guard} THEN NULL ELSE {body} END"
        ul = f"lower({self._txt(u)})"
        whens = " ".join(
            f"WHEN {ul} = '{k}' THEN {v}" for k, v in branches.items()
        )
        return f"CASE WHEN {guard} THEN NULL {whens} ELSE NULL END"

    def _date_diff(self, e: st.SFunc) -> str:
        u = self.expr(e.args[0])
        a, b = self.expr(e.args[1]), self.expr(e.args[2])
        ta, tb = self._txt(a), self._txt(b)

        def part(t: str, start: int, width: int) -> str:
            return f"CAST(substr({t}, {start}, {width}) AS INTEGER)"

        years = f"({part(tb, 1, 4)} - {part(ta, 1, 4)})"
        months = f"({part(tb, 6, 2)} - {part(ta, 6, 2)})"
        days = (
            f"CAST(julianday(substr({tb}, 1, 10)) - "
            f"julianday(substr({ta}, 1, 10)) AS INTEGER)"
        )
        hour_guard = f"length({ta}) < 13 OR length({tb}) < 13"
        branches = {
            "year": years,
            "quarter": (
                f"({years} * 4 + (({part(tb, 6, 2)} - 1) / 3 - "
                f"({part(ta, 6, 2)} - 1) / 3))"
            ),
            "month": f"({years} * 12 + {months})",
            "day": days,
            "hour": (
                f"CASE WHEN {hour_guard} THEN NULL ELSE "
                f"({days} * 24 + ({part(tb, 12, 2)} - {part(ta, 12, 2)})) END"
            ),
        }
        guard = (
            f"{a} IS NULL OR {b} IS NULL OR {u} IS NULL "
            f"OR length({ta}) < 10 OR length({tb}) < 10"
        )
        unit = self._unit_of(e.args[0])
        if unit is not None:
            body = branches.get(unit, "NULL")
            return f"CASE WHEN {guard} THEN NULL ELSE {body} END"
        ul = f"lower({self._txt(u)})"
        whens = " ".join(
            f"WHEN {ul} = '{k}' THEN {v}" for k, v in branches.items()
        )
        return f"CASE WHEN {guard} THEN NULL {whens} ELSE NULL END"
