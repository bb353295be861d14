"""Reference evaluation of logical plans over in-memory tables.

This is the differential-testing oracle: for every plan, evaluating it here
must match executing the compiled SQL on the embedded engine cell for cell.
All scalar semantics live in ``gridbook.values``; this module only
orchestrates stages.
"""

from __future__ import annotations

from typing import Callable, Optional, Protocol

from ..plan import stages as st
from ..values import (
    Storage,
    ValueType,
    add,
    ascii_lower,
    ascii_upper,
    cast_text,
    compare,
    concat,
    date_diff,
    date_month,
    date_trunc,
    date_year,
    div,
    is_truthy,
    like,
    logical_and,
    logical_not,
    logical_or,
    mod,
    mul,
    neg,
    sqlite_round,
    sub,
    sum_number,
    to_number,
)
from . import kernels
from .table import ColumnarTable

ORD = st.ORD


class SourceLookup(Protocol):
    def scan_table(self, scan: st.TableScan) -> ColumnarTable:
        """Rows of a physical table in stable scan (rowid) order; columns
        keyed by source names."""
        ...


def evaluate_plan(plan: st.Plan, lookup: SourceLookup) -> ColumnarTable:
    env: dict[str, ColumnarTable] = {}
    for stage in plan.stages:
        env[stage.out] = _run_stage(stage, env, lookup)
    return env[plan.output]


def _run_stage(stage: st.Stage, env: dict[str, ColumnarTable],
               lookup: SourceLookup) -> ColumnarTable:
    if isinstance(stage, st.Scan):
        return _scan(stage, lookup)
    if isinstance(stage, st.Compute):
        return _compute(stage, env[stage.input])
    if isinstance(stage, st.GroupBy):
        return _group_by(stage, env[stage.input])
    if isinstance(stage, st.Window):
        return _window(stage, env[stage.input])
    if isinstance(stage, st.Join):
        return _join(stage, env[stage.left], env[stage.right])
    if isinstance(stage, st.UnionAll):
        return _union(stage, env[stage.left], env[stage.right])
    if isinstance(stage, st.Renumber):
        return _renumber(stage, env[stage.input])
    if isinstance(stage, st.Filter):
        return _filter(stage, env[stage.input])
    if isinstance(stage, st.Project):
        return _project(stage, env[stage.input])
    if isinstance(stage, st.Sort):
        return _sort(stage, env[stage.input])
    if isinstance(stage, st.Page):
        return _page(stage, env[stage.input])
    raise TypeError(f"unknown stage {stage!r}")


# ---------------------------------------------------------------------------
# Scalar expressions


def compile_expr(expr: st.SExpr, table: ColumnarTable
                 ) -> Callable[[int], Storage]:
    if isinstance(expr, st.SLit):
        v = expr.value
        return lambda i: v
    if isinstance(expr, st.SCol):
        col = table.columns[expr.name]
        return lambda i: col[i]
    if isinstance(expr, st.SUn):
        a = compile_expr(expr.a, table)
        if expr.op == "-":
            return lambda i: neg(a(i))
        return lambda i: logical_not(a(i))
    if isinstance(expr, st.SBin):
        return _compile_binary(expr, table)
    if isinstance(expr, st.SFunc):
        return _compile_func(expr, table)
    raise TypeError(f"unknown expression {expr!r}")


_BIN = {
    "+": add, "-": sub, "*": mul, "/": div, "%": mod, "&": concat,
    "and": logical_and, "or": logical_or,
}

_CMP = {
    "=": lambda c: 1 if c == 0 else 0,
    "<>": lambda c: 1 if c != 0 else 0,
    "<": lambda c: 1 if c < 0 else 0,
    "<=": lambda c: 1 if c <= 0 else 0,
    ">": lambda c: 1 if c > 0 else 0,
    ">=": lambda c: 1 if c >= 0 else 0,
}


def _compile_binary(expr: st.SBin, table: ColumnarTable):
    a = compile_expr(expr.a, table)
    b = compile_expr(expr.b, table)
    fn = _BIN.get(expr.op)
    if fn is not None:
        return lambda i: fn(a(i), b(i))
    result = _CMP[expr.op]

    def cmp(i: int) -> Storage:
        c = compare(a(i), b(i))
        if c is None:
            return None
        return result(c)

    return cmp


def _compile_func(expr: st.SFunc, table: ColumnarTable):
    args = [compile_expr(a, table) for a in expr.args]
    name = expr.name
    if name == "if":
        c, t, f = args
        return lambda i: t(i) if is_truthy(c(i)) else f(i)
    if name == "coalesce":
        def co(i: int) -> Storage:
            for a in args:
                v = a(i)
                if v is not None:
                    return v
            return None
        return co
    if name == "abs":
        a = args[0]

        def fabs(i: int) -> Storage:
            v = a(i)
            n = to_number(v)
            if n is None:
                return None
            # text operands come back REAL from the engine's abs()
            return abs(float(n)) if isinstance(v, str) else abs(n)

        return fabs
    if name == "round":
        if len(args) == 1:
            a = args[0]
            return lambda i: sqlite_round(a(i))
        a, d = args
        return lambda i: sqlite_round(a(i), d(i))
    if name == "concat":
        def cc(i: int) -> Storage:
            out: Storage = ""
            for a in args:
                out = concat(out, a(i))
                if out is None:
                    return None
            return out
        return cc
    if name == "lower":
        a = args[0]
        return lambda i: ascii_lower(a(i))
    if name == "upper":
        a = args[0]
        return lambda i: ascii_upper(a(i))
    if name == "datetrunc":
        u, a = args
        return lambda i: date_trunc(u(i), a(i))
    if name == "datediff":
        u, a, b = args
        return lambda i: date_diff(u(i), a(i), b(i))
    if name == "year":
        a = args[0]
        return lambda i: date_year(a(i))
    if name == "month":
        a = args[0]
        return lambda i: date_month(a(i))
    if name == "like":
        a, p = args
        return lambda i: like(a(i), p(i))
    if name in ("inlist", "notinlist"):
        return _compile_inlist(args, negated=(name == "notinlist"))
    raise TypeError(f"unknown function {name!r}")


def _compile_inlist(args, negated: bool):
    x = args[0]
    items = args[1:]

    def run(i: int) -> Storage:
        if not items:
            # empty list: false (true when negated) even for Null
            return 1 if negated else 0
        v = x(i)
        if v is None:
            return None
        found = False
        any_null = False
        for item in items:
            w = item(i)
            if w is None:
                any_null = True
            elif compare(v, w) == 0:
                found = True
                break
        if found:
            return 0 if negated else 1
        if any_null:
            return None
        return 1 if negated else 0

    return run


# ---------------------------------------------------------------------------
# Stages


def _scan(stage: st.Scan, lookup: SourceLookup) -> ColumnarTable:
    src = stage.source
    if isinstance(src, st.SubplanScan):
        return evaluate_plan(src.plan, lookup)
    raw = lookup.scan_table(src)
    out = ColumnarTable()
    for source_name, out_name, vtype in src.columns:
        out.add_column(out_name, vtype, list(raw.columns[source_name]))
    out.add_column(ORD, ValueType.NUMBER, list(range(1, raw.nrows + 1)))
    return out


def _compute(stage: st.Compute, table: ColumnarTable) -> ColumnarTable:
    out = ColumnarTable()
    keep = stage.keep if stage.keep is not None else table.names
    for name in keep:
        out.add_column(name, table.types[name], table.columns[name])
    n = table.nrows
    for d in stage.defs:
        fn = compile_expr(d.expr, table)
        out.add_column(d.name, d.vtype, [fn(i) for i in range(n)])
    return out


def _group_by(stage: st.GroupBy, table: ColumnarTable) -> ColumnarTable:
    n = table.nrows
    key_cols = [table.columns[k] for k in stage.keys]
    groups = kernels.group_rows(key_cols, list(range(n)))
    if not stage.keys and not groups:
        groups = [[]]  # aggregate without GROUP BY always yields one row
    out = ColumnarTable()
    for k in stage.keys:
        out.add_column(
            k, table.types[k], [table.columns[k][g[0]] for g in groups]
        )
    for agg in stage.aggs:
        argfn = (
            compile_expr(agg.arg, table) if agg.arg is not None else None
        )
        out.add_column(
            agg.name, agg.vtype,
            [_aggregate(agg.func, g, argfn) for g in groups],
        )
    return out


def _aggregate(func: str, rows: list[int], argfn) -> Storage:
    if func == "count":
        if argfn is None:
            return len(rows)
        return sum(1 for i in rows if argfn(i) is not None)
    if func == "count_if":
        return sum(1 for i in rows if is_truthy(argfn(i)))
    if func == "count_distinct":
        return len({argfn(i) for i in rows} - {None})
    if func == "sum":
        acc: Storage = None
        for i in rows:
            v = argfn(i)
            if v is None:
                continue
            n = sum_number(v)
            acc = n if acc is None else acc + n
        return acc
    if func == "avg":
        total = 0.0
        count = 0
        for i in rows:
            v = argfn(i)
            if v is None:
                continue
            total += float(to_number(v))
            count += 1
        return total / count if count else None
    if func in ("min", "max"):
        best: Storage = None
        sign = -1 if func == "min" else 1
        for i in rows:
            v = argfn(i)
            if v is None:
                continue
            if best is None:
                best = v
                continue
            c = compare(v, best)
            if c is not None and (c * sign) > 0:
                best = v
        return best
    if func == "attr":
        lo: Storage = None
        hi: Storage = None
        seen = False
        for i in rows:
            v = argfn(i)
            if v is None:
                continue
            if not seen:
                lo = hi = v
                seen = True
                continue
            if compare(v, lo) < 0:  # type: ignore[operator]
                lo = v
            if compare(v, hi) > 0:  # type: ignore[operator]
                hi = v
        if not seen:
            return None
        if compare(lo, hi) == 0:
            return lo
        from ..values import MULTIVALUE_TOKEN

        return MULTIVALUE_TOKEN
    raise TypeError(f"unknown aggregate {func!r}")


def _order_items(table: ColumnarTable, order: list[st.OrderItem]
                 ) -> list[tuple[list[Storage], bool]]:
    return [
        (table.columns[o.col], o.direction == "desc") for o in order
    ]


def _window(stage: st.Window, table: ColumnarTable) -> ColumnarTable:
    out = ColumnarTable()
    for name in table.names:
        out.add_column(name, table.types[name], table.columns[name])
    n = table.nrows
    for d in stage.defs:
        values: list[Storage] = [None] * n
        part_cols = [table.columns[p] for p in d.partition]
        partitions = kernels.group_rows(part_cols, list(range(n)))
        items = _order_items(table, d.order)
        for part in partitions:
            ordered = kernels.sort_indices(part, items)
            _window_fill(d, ordered, table, items, values)
        out.add_column(d.name, d.vtype, values)
    return out


def _window_fill(d: st.WindowDef, ordered: list[int], table: ColumnarTable,
                 items, values: list[Storage]) -> None:
    col = table.columns[d.arg] if d.arg is not None else None
    func = d.func
    if func in ("lag", "lead"):
        k = d.param or 1
        step = -k if func == "lag" else k
        for pos, i in enumerate(ordered):
            j = pos + step
            values[i] = (
                col[ordered[j]] if 0 <= j < len(ordered) else None
            )
        return
    if func == "rank":
        rank = 0
        for pos, i in enumerate(ordered):
            if pos == 0 or not _peers(ordered[pos - 1], i, items):
                rank = pos + 1
            values[i] = rank
        return
    if func == "row_number":
        for pos, i in enumerate(ordered):
            values[i] = pos + 1
        return
    seq = [col[i] for i in ordered]  # type: ignore[index]
    if func == "fill_down":
        result = kernels.fill_down(seq)
    elif func == "cumulative_sum":
        result = kernels.running_sum(seq)
    elif func == "moving_average":
        result = kernels.moving_average(seq, d.param or 1)
    else:
        raise TypeError(f"unknown window function {func!r}")
    for i, v in zip(ordered, result):
        values[i] = v


def _peers(i: int, j: int, items) -> bool:
    for col, _desc in items:
        a, b = col[i], col[j]
        if a is None and b is None:
            continue
        if a is None or b is None:
            return False
        if compare(a, b) != 0:
            return False
    return True


def _join(stage: st.Join, left: ColumnarTable, right: ColumnarTable
          ) -> ColumnarTable:
    lkeys = [left.columns[a] for a, _b in stage.on]
    rkeys = [right.columns[b] for _a, b in stage.on]
    nright = right.nrows

    if stage.kind == "cross":
        right_rows: Optional[dict] = None
    else:
        index: dict[tuple, list[int]] = {}
        for j in range(nright):
            key = tuple(col[j] for col in rkeys)
            if not stage.null_safe and any(v is None for v in key):
                continue
            index.setdefault(key, []).append(j)
        right_rows = index

    pairs: list[tuple[int, Optional[int]]] = []
    keep_left: list[int] = []
    for i in range(left.nrows):
        if stage.kind == "cross":
            for j in range(nright):
                pairs.append((i, j))
            continue
        key = tuple(col[i] for col in lkeys)
        if not stage.null_safe and any(v is None for v in key):
            matches: list[int] = []
        else:
            matches = right_rows.get(key, [])  # type: ignore[union-attr]
        if stage.kind == "semi":
            if not stage.on:
                if nright > 0:
                    keep_left.append(i)
            elif matches:
                keep_left.append(i)
            continue
        if matches:
            for j in matches:
                pairs.append((i, j))
        elif stage.kind == "left":
            pairs.append((i, None))

    if stage.kind == "semi":
        return left.select(keep_left)

    out = ColumnarTable()
    lidx = [i for i, _j in pairs]
    for name in left.names:
        col = left.columns[name]
        out.add_column(name, left.types[name], [col[i] for i in lidx])
    for rname, oname in stage.right_cols:
        col = right.columns[rname]
        out.add_column(
            oname, right.types[rname],
            [col[j] if j is not None else None for _i, j in pairs],
        )
    return out


def _union(stage: st.UnionAll, left: ColumnarTable, right: ColumnarTable
           ) -> ColumnarTable:
    out = ColumnarTable()
    for lname, rname in stage.cols:
        out.add_column(
            lname, left.types[lname],
            list(left.columns[lname]) + list(right.columns[rname]),
        )
    return out


def _renumber(stage: st.Renumber, table: ColumnarTable) -> ColumnarTable:
    n = table.nrows
    ordered = kernels.sort_indices(
        list(range(n)), _order_items(table, stage.order)
    )
    ords: list[Storage] = [None] * n
    for pos, i in enumerate(ordered):
        ords[i] = pos + 1
    out = ColumnarTable()
    for name in table.names:
        if name in stage.drop or name == ORD:
            continue
        out.add_column(name, table.types[name], table.columns[name])
    out.add_column(ORD, ValueType.NUMBER, ords)
    return out


def _filter(stage: st.Filter, table: ColumnarTable) -> ColumnarTable:
    fn = compile_expr(stage.predicate, table)
    keep = [i for i in range(table.nrows) if is_truthy(fn(i))]
    return table.select(keep)


def _project(stage: st.Project, table: ColumnarTable) -> ColumnarTable:
    out = ColumnarTable()
    for source, display, vtype in stage.cols:
        out.add_column(display, vtype, list(table.columns[source]))
    return out


def _sort(stage: st.Sort, table: ColumnarTable) -> ColumnarTable:
    ordered = kernels.sort_indices(
        list(range(table.nrows)), _order_items(table, stage.order)
    )
    return table.select(ordered)


def _page(stage: st.Page, table: ColumnarTable) -> ColumnarTable:
    indices = list(range(table.nrows))[stage.offset:stage.offset + stage.limit]
    return table.select(indices)
