"""Randomized workbook generation and differential checking.

Generates random source tables and workbook documents drawing on the full
function catalog (aggregates, windows, cross-element Lookup/Rollup,
filters), then checks that reference evaluation and compiled SQL agree
cell for cell.  Formula generation is rejection-sampled: candidate columns
that fail resolution or type checking are simply dropped, so every
generated document is valid by construction.
"""

from __future__ import annotations

import random
from typing import Optional

from .difftest import MemoryWarehouse, run_differential
from .model import (
    ColumnSpec,
    Element,
    FilterSpec,
    JoinOrUnionSpec,
    LevelSpec,
    Page,
    SourceSpec,
    TableElementSpec,
    WorkbookDocument,
)
from .plan.lower import ExpansionState, PlanningError, lower_output_plan, lower_to_plan
from .plan.resolve import ResolutionFailure, Resolver
from .values import ValueType

NUMBER = ValueType.NUMBER
TEXT = ValueType.TEXT
DATE = ValueType.DATE
LOGICAL = ValueType.LOGICAL

_TEXT_POOL = ["a", "b", "c", "north", "south", "east", "", "3x", "12", "x y"]
_NUM_POOL = [0, 1, 2, 3, 5, 7, 10, -1, -4, 100, 2.5, -0.5, 0.125, 1.5]
_DATE_POOL = [
    "2023-11-30 00:00:00.000000",
    "2024-01-15 00:00:00.000000",
    "2024-01-15 08:30:00.000000",
    "2024-02-29 23:59:59.000000",
    "2024-04-02 12:00:00.000000",
    "2024-07-09 00:00:00.000000",
    "2025-01-01 00:00:00.000000",
]
_UNITS = ("year", "quarter", "month", "day", "hour")


def _pool(vtype: ValueType) -> list:
    if vtype is NUMBER:
        return _NUM_POOL
    if vtype is DATE:
        return _DATE_POOL
    if vtype is LOGICAL:
        return [0, 1]
    return _TEXT_POOL


# ---------------------------------------------------------------------------
# Source tables


def gen_source(rng: random.Random, prefix: str
               ) -> tuple[list[tuple[str, ValueType]], list[tuple]]:
    schema: list[tuple[str, ValueType]] = [(f"{prefix}K1", TEXT)]
    if rng.random() < 0.6:
        schema.append((f"{prefix}K2", NUMBER))
    schema.append((f"{prefix}N1", NUMBER))
    if rng.random() < 0.5:
        schema.append((f"{prefix}N2", NUMBER))
    if rng.random() < 0.7:
        schema.append((f"{prefix}D1", DATE))
    if rng.random() < 0.3:
        schema.append((f"{prefix}L1", LOGICAL))

    nrows = rng.choice([0, rng.randrange(1, 15), rng.randrange(15, 200)])
    # low-cardinality pools per column so grouping and joins hit often
    pools = {}
    for name, vtype in schema:
        p = _pool(vtype)
        k = rng.randrange(2, min(len(p), 6) + 1)
        pools[name] = rng.sample(p, k)
    rows = []
    for _ in range(nrows):
        row = []
        for name, _vtype in schema:
            if rng.random() < 0.15:
                row.append(None)
            else:
                row.append(rng.choice(pools[name]))
        rows.append(tuple(row))
    return schema, rows


# ---------------------------------------------------------------------------
# Formula generation


class _Ctx:
    def __init__(self, rng: random.Random, cols: list[tuple[str, ValueType, int]],
                 level: int, nlevels: int, allow_agg: bool, allow_window: bool,
                 remote: Optional[tuple[str, list[tuple[str, ValueType]]]] = None):
        self.rng = rng
        self.cols = cols  # (display name, type, residency)
        self.level = level
        self.nlevels = nlevels
        self.allow_agg = allow_agg and level >= 1
        self.allow_window = allow_window and level < nlevels - 1
        self.remote = remote

    def refs(self, vtype: ValueType, below: Optional[int] = None) -> list[str]:
        return [
            n for n, t, r in self.cols
            if t is vtype and (below is None or r < below)
        ]


def _lit(rng: random.Random, vtype: ValueType) -> str:
    v = rng.choice(_pool(vtype))
    if vtype is NUMBER:
        return repr(v)
    if vtype is LOGICAL:
        return "true" if v else "false"
    return '"' + str(v).replace('"', '""') + '"'


def gen_expr(ctx: _Ctx, vtype: ValueType, depth: int = 0) -> str:
    rng = ctx.rng
    if depth >= 3 or rng.random() < 0.35:
        return _leaf(ctx, vtype)
    roll = rng.random()
    if ctx.allow_agg and roll < 0.25:
        agg = _agg_expr(ctx, vtype, depth)
        if agg:
            return agg
    if ctx.allow_window and roll < 0.40:
        win = _window_expr(ctx, vtype, depth)
        if win:
            return win
    return _scalar_expr(ctx, vtype, depth)


def _leaf(ctx: _Ctx, vtype: ValueType) -> str:
    refs = ctx.refs(vtype)
    if refs and ctx.rng.random() < 0.75:
        return f"[{ctx.rng.choice(refs)}]"
    if ctx.rng.random() < 0.1:
        return "null"
    return _lit(ctx.rng, vtype)


def _scalar_expr(ctx: _Ctx, vtype: ValueType, depth: int) -> str:
    rng = ctx.rng
    sub = lambda t: gen_expr(ctx, t, depth + 1)
    if vtype is NUMBER:
        op = rng.choice(["+", "-", "*", "/", "%", "f"])
        if op != "f":
            return f"({sub(NUMBER)} {op} {sub(NUMBER)})"
        kind = rng.choice(["abs", "round", "round2", "neg", "if",
                           "coalesce", "year", "month", "datediff"])
        if kind == "abs":
            return f"Abs({sub(NUMBER)})"
        if kind == "round":
            return f"Round({sub(NUMBER)})"
        if kind == "round2":
            return f"Round({sub(NUMBER)}, {rng.randrange(0, 3)})"
        if kind == "neg":
            return f"-({sub(NUMBER)})"
        if kind == "if":
            return f"If({sub(LOGICAL)}, {sub(NUMBER)}, {sub(NUMBER)})"
        if kind == "coalesce":
            return f"Coalesce({sub(NUMBER)}, {sub(NUMBER)})"
        if kind == "year":
            return f"Year({sub(DATE)})"
        if kind == "month":
            return f"Month({sub(DATE)})"
        unit = rng.choice(_UNITS)
        return f'DateDiff("{unit}", {sub(DATE)}, {sub(DATE)})'
    if vtype is TEXT:
        kind = rng.choice(["concat", "amp", "lower", "upper", "if", "leaf"])
        if kind == "concat":
            return f"Concat({sub(TEXT)}, {sub(TEXT)})"
        if kind == "amp":
            return f"({sub(TEXT)} & {sub(TEXT)})"
        if kind == "lower":
            return f"Lower({sub(TEXT)})"
        if kind == "upper":
            return f"Upper({sub(TEXT)})"
        if kind == "if":
            return f"If({sub(LOGICAL)}, {sub(TEXT)}, {sub(TEXT)})"
        return _leaf(ctx, TEXT)
    if vtype is DATE:
        if rng.random() < 0.5:
            unit = rng.choice(_UNITS)
            return f'DateTrunc("{unit}", {sub(DATE)})'
        return _leaf(ctx, DATE)
    # LOGICAL
    kind = rng.choice(["cmpn", "cmpt", "cmpd", "bool", "not"])
    if kind == "cmpn":
        op = rng.choice(["=", "<>", "<", "<=", ">", ">="])
        return f"({sub(NUMBER)} {op} {sub(NUMBER)})"
    if kind == "cmpt":
        op = rng.choice(["=", "<>", "<", ">"])
        return f"({sub(TEXT)} {op} {sub(TEXT)})"
    if kind == "cmpd":
        op = rng.choice(["=", "<", ">", "<="])
        return f"({sub(DATE)} {op} {sub(DATE)})"
    if kind == "bool":
        op = rng.choice(["and", "or"])
        return f"({sub(LOGICAL)} {op} {sub(LOGICAL)})"
    return f"(not {sub(LOGICAL)})"


def _agg_expr(ctx: _Ctx, vtype: ValueType, depth: int) -> Optional[str]:
    rng = ctx.rng
    inner = _Ctx(rng, ctx.cols, ctx.level, ctx.nlevels,
                 allow_agg=False, allow_window=False)
    inner.cols = [(n, t, r) for n, t, r in ctx.cols if r < ctx.level]
    if vtype is NUMBER:
        func = rng.choice(["Sum", "Avg", "Min", "Max", "Count", "Count0",
                           "CountIf", "CountDistinct"])
        if func == "Count0":
            return "Count()"
        if func == "CountIf":
            if not inner.cols:
                return None
            return f"CountIf({gen_expr(inner, LOGICAL, depth + 1)})"
        if func in ("Count", "CountDistinct"):
            if not inner.cols:
                return None
            n, t, _r = rng.choice(inner.cols)
            return f"{func}([{n}])"
        arg = gen_expr(inner, NUMBER, depth + 1)
        return f"{func}({arg})"
    if vtype in (TEXT, DATE):
        refs = inner.refs(vtype)
        if not refs:
            return None
        func = rng.choice(["Min", "Max", "Attr"])
        return f"{func}([{rng.choice(refs)}])"
    return None


def _window_expr(ctx: _Ctx, vtype: ValueType, depth: int) -> Optional[str]:
    rng = ctx.rng
    inner = _Ctx(rng, ctx.cols, ctx.level, ctx.nlevels,
                 allow_agg=False, allow_window=False)
    if vtype is NUMBER:
        func = rng.choice(["Lag", "Lead", "Rank", "FillDown",
                           "MovingAverage", "CumulativeSum"])
        if func == "Rank":
            return "Rank()"
        arg = gen_expr(inner, NUMBER, depth + 1)
        if func in ("Lag", "Lead"):
            if rng.random() < 0.5:
                return f"{func}({arg}, {rng.randrange(1, 4)})"
            return f"{func}({arg})"
        if func == "MovingAverage":
            return f"MovingAverage({arg}, {rng.randrange(1, 5)})"
        return f"{func}({arg})"
    if vtype in (TEXT, DATE, LOGICAL):
        arg = gen_expr(inner, vtype, depth + 1)
        func = rng.choice(["Lag", "Lead", "FillDown"])
        return f"{func}({arg})"
    return None


def _remote_expr(ctx: _Ctx, vtype: ValueType) -> Optional[str]:
    """A Lookup or Rollup against the remote element."""
    if ctx.remote is None:
        return None
    rng = ctx.rng
    element, rschema = ctx.remote
    rcols = [(n, t) for n, t in rschema if t is vtype]
    if not rcols:
        return None
    rname, _rt = rng.choice(rcols)
    # key pairs: local expression matched to a remote column
    pairs = []
    for kname, ktype in rng.sample(rschema, k=min(len(rschema),
                                                  rng.randrange(1, 3))):
        locals_ = ctx.refs(ktype)
        local = f"[{rng.choice(locals_)}]" if locals_ else _lit(rng, ktype)
        pairs.append(f"{local}, [{element}/{kname}]")
    pair_text = ", ".join(pairs)
    if vtype is NUMBER and rng.random() < 0.5:
        func = rng.choice(["Sum", "Avg", "Min", "Max", "Count"])
        return f"Rollup({func}([{element}/{rname}]), {pair_text})"
    return f"Lookup([{element}/{rname}], {pair_text})"


# ---------------------------------------------------------------------------
# Workbook generation


class FuzzWorkbook:
    def __init__(self, doc: WorkbookDocument, warehouse: MemoryWarehouse,
                 element_ids: list[str], seed: int):
        self.doc = doc
        self.warehouse = warehouse
        self.element_ids = element_ids
        self.seed = seed


def _valid(doc: WorkbookDocument, eid: str, warehouse: MemoryWarehouse
           ) -> Optional[dict[str, ValueType]]:
    """Resolved column types when the element resolves and lowers cleanly,
    else None."""
    try:
        resolver = Resolver(doc, warehouse)
        table = resolver.resolve_table(eid)
        lower_to_plan(resolver, warehouse, eid, ExpansionState())
        return {
            cid: rc.vtype for cid, rc in table.columns.items()
            if rc.vtype is not None
        }
    except (ResolutionFailure, PlanningError, RecursionError):
        return None


def _gen_element(rng: random.Random, eid: str, source: SourceSpec,
                 schema: list[tuple[str, ValueType]],
                 doc: WorkbookDocument, warehouse: MemoryWarehouse,
                 remote: Optional[tuple[str, list[tuple[str, ValueType]]]],
                 extra_inputs: Optional[list[JoinOrUnionSpec]] = None,
                 ) -> TableElementSpec:
    nlevels = rng.choice([2, 2, 3, 3, 4])
    body = TableElementSpec(
        source=source,
        extra_inputs=extra_inputs or [],
        levels=[LevelSpec() for _ in range(nlevels)],
        columns={},
    )
    element = Element(eid, "table", body)
    doc.pages[0].elements.append(element)

    counter = 0
    types: dict[str, ValueType] = {}

    def add_column(spec: ColumnSpec) -> bool:
        body.columns[spec.column_id] = spec
        resolved = _valid(doc, eid, warehouse)
        if resolved is not None:
            types.clear()
            types.update(resolved)
            return True
        del body.columns[spec.column_id]
        return False

    # passthrough columns over source columns: grouping keys and ordering
    # targets must be defined columns, so every element starts with a few
    passthroughs: list[tuple[str, ValueType]] = []
    for name, vtype in schema:
        if len(passthroughs) >= 3 or rng.random() < 0.25:
            continue
        counter += 1
        cid = f"F{counter}"
        if add_column(ColumnSpec(cid, cid, f"[{name}]",
                                 hidden=rng.random() < 0.2)):
            passthroughs.append((cid, vtype))

    # grouping keys for the middle levels, coarser levels use fewer keys
    keyable = [c for c in passthroughs if c[1] in (TEXT, NUMBER, DATE)]
    for i in range(1, nlevels - 1):
        want = max(1, (nlevels - 1 - i))
        keys = [c for c, _t in rng.sample(keyable, k=min(want, len(keyable)))] \
            if keyable else []
        body.levels[i] = LevelSpec(keys=keys)
    if _valid(doc, eid, warehouse) is None:  # e.g. no keyable columns
        nlevels = 2
        body.levels[:] = [LevelSpec(), LevelSpec()]

    # sometimes order the base level explicitly
    if passthroughs and rng.random() < 0.5:
        cid, _t = rng.choice(passthroughs)
        order = [(cid, rng.choice(["asc", "desc"]))]
        body.levels[0] = LevelSpec(ordering=order)
        if _valid(doc, eid, warehouse) is None:
            body.levels[0] = LevelSpec()

    # formula columns across residency levels
    target_total = rng.randrange(len(body.columns), 9)
    attempts = 0
    while len(body.columns) < target_total and attempts < 30:
        attempts += 1
        counter += 1
        cid = f"F{counter}"
        level = rng.choice([0] * 3 + list(range(nlevels)))
        cols = [
            (c.column_id, types[c.column_id], c.resident_level)
            for c in body.columns.values()
            if c.column_id in types
        ]
        cols_plus = cols + [(n, t, 0) for n, t in schema]
        ctx = _Ctx(rng, cols_plus, level, nlevels,
                   allow_agg=True, allow_window=True, remote=remote)
        vtype = rng.choice([NUMBER] * 3 + [TEXT, DATE, LOGICAL])
        if remote is not None and rng.random() < 0.25:
            formula = _remote_expr(ctx, vtype)
            if formula is None:
                continue
        else:
            formula = gen_expr(ctx, vtype)
        add_column(ColumnSpec(cid, cid, formula, resident_level=level,
                              hidden=rng.random() < 0.1))

    # filters
    for _ in range(rng.randrange(0, 4)):
        f = _gen_filter(rng, body, types, nlevels)
        if f is not None:
            body.filters.append(f)
            if _valid(doc, eid, warehouse) is None:
                body.filters.pop()
    return body


def _gen_filter(rng: random.Random, body: TableElementSpec,
                types: dict[str, ValueType],
                nlevels: int) -> Optional[FilterSpec]:
    kind = rng.choice(["expression", "expression", "include-list",
                       "exclude-list", "range", "text-match", "top-n"])
    visible = [c for c in body.columns.values() if c.column_id in types]
    if kind == "expression":
        cols = [
            (c.column_id, types[c.column_id], c.resident_level)
            for c in visible
        ]
        ctx = _Ctx(rng, cols, rng.randrange(0, nlevels), nlevels,
                   allow_agg=rng.random() < 0.5, allow_window=False)
        return FilterSpec(target=None, kind="expression",
                          expression=gen_expr(ctx, LOGICAL))
    if not visible:
        return None
    col = rng.choice(visible)
    vtype = types[col.column_id]
    pool = _pool(vtype)
    if kind in ("include-list", "exclude-list"):
        values = rng.sample(pool, k=min(len(pool), rng.randrange(1, 4)))
        if vtype is LOGICAL:
            values = [bool(v) for v in values]
        return FilterSpec(target=col.column_id, kind=kind, values=values)
    if kind == "range" and vtype in (NUMBER, DATE):
        lo, hi = sorted(rng.sample(pool, k=2), key=lambda v: (isinstance(v, str), v))
        return FilterSpec(target=col.column_id, kind="range", low=lo, high=hi)
    if kind == "text-match" and vtype is TEXT:
        return FilterSpec(target=col.column_id, kind="text-match",
                          pattern=rng.choice(["a%", "%o%", "_", "%3%", ""]))
    if kind == "top-n":
        return FilterSpec(target=col.column_id, kind="top-n",
                          n=rng.randrange(1, 5),
                          direction=rng.choice(["asc", "desc"]))
    return None


def build_workbook(seed: int, force_remote: Optional[bool] = None
                   ) -> FuzzWorkbook:
    rng = random.Random(seed)
    two_sources = rng.random() < 0.6
    tables = {"S1": gen_source(rng, "A")}
    if two_sources:
        tables["S2"] = gen_source(rng, "B")
    warehouse = MemoryWarehouse(tables)

    doc = WorkbookDocument(f"fuzz-{seed}", pages=[Page("p1", [])])
    element_ids = []

    remote = None
    use_remote = force_remote if force_remote is not None \
        else (two_sources and rng.random() < 0.5)
    if two_sources:
        _gen_element(rng, "dim", SourceSpec("warehouse-table", "S2"),
                     tables["S2"][0], doc, warehouse, remote=None)
        element_ids.append("dim")
        if use_remote:
            out = Resolver(doc, warehouse).output("dim")
            remote = ("dim", list(out.schema))

    extra = None
    if two_sources and not use_remote and rng.random() < 0.3:
        a, b = tables["S1"][0], tables["S2"][0]
        pairs = [
            (na, nb)
            for na, ta in a
            for nb, tb in b
            if ta in (TEXT, NUMBER) and tb is ta
        ]
        if pairs:
            extra = [JoinOrUnionSpec(
                kind="join", source=SourceSpec("warehouse-table", "S2"),
                join_type=rng.choice(["inner", "left"]),
                on=[rng.choice(pairs)])]
    elif not two_sources and rng.random() < 0.2:
        extra = [JoinOrUnionSpec(kind="union",
                                 source=SourceSpec("warehouse-table", "S1"))]

    source = SourceSpec("warehouse-table", "S1")
    schema = tables["S1"][0]
    if two_sources and not use_remote and extra is None and rng.random() < 0.25:
        # chain: main reads the dim element's output instead of a table
        source = SourceSpec("element-ref", "dim")
        schema = list(Resolver(doc, warehouse).output("dim").schema)
    _gen_element(rng, "main", source, schema, doc, warehouse,
                 remote=remote, extra_inputs=extra)
    element_ids.append("main")
    return FuzzWorkbook(doc, warehouse, element_ids, seed)


# ---------------------------------------------------------------------------
# Differential checking


def random_state(rng: random.Random, doc: WorkbookDocument, eid: str
                 ) -> ExpansionState:
    el = doc.find_element(eid)
    nlevels = len(el.body.levels)  # type: ignore[union-attr]
    state = ExpansionState()
    if rng.random() < 0.4:
        cut = rng.randrange(0, nlevels)
        state.collapsed = [i < cut for i in range(nlevels)]
    if rng.random() < 0.3:
        state.limit = rng.randrange(1, 30)
        state.offset = rng.randrange(0, 5)
    if rng.random() < 0.3:
        state.with_ordinal = True
    return state


def check_workbook(seed: int) -> Optional[str]:
    """None when oracle and SQL agree on every element and view state."""
    try:
        fw = build_workbook(seed)
    except Exception as exc:  # generation must never crash the run
        return f"seed {seed}: generation error: {exc!r}"
    try:
        rng = random.Random(seed ^ 0x5EED)
        resolver = Resolver(fw.doc, fw.warehouse)
        for eid in fw.element_ids:
            states = [ExpansionState(), random_state(rng, fw.doc, eid)]
            for state in states:
                plan = lower_to_plan(resolver, fw.warehouse, eid, state)
                err = run_differential(plan, fw.warehouse)
                if err:
                    return f"seed {seed} element {eid}: {err}"
            out_plan = lower_output_plan(resolver, fw.warehouse, eid)
            err = run_differential(out_plan, fw.warehouse)
            if err:
                return f"seed {seed} element {eid} (output): {err}"
        return None
    except Exception as exc:
        return f"seed {seed}: {type(exc).__name__}: {exc}"
    finally:
        fw.warehouse.close()


def fuzz_many(count: int, base_seed: int = 0,
              progress=None) -> list[str]:
    failures = []
    for i in range(count):
        err = check_workbook(base_seed + i)
        if err:
            failures.append(err)
        if progress is not None and (i + 1) % 100 == 0:
            progress(i + 1, len(failures))
    return failures
