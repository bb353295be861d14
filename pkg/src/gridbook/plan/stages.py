"""Logical plan IR shared by the SQL compiler and the in-memory evaluator.

A plan is a linear list of stages, each producing a named table from named
inputs.  The planner does all semantic work (levels, residency, automatic
ATTR, greedy filters); stages are deliberately primitive so that the two
consumers only need to agree on scalar/aggregate/window semantics.

Plans have a canonical text form (docs/plan-format.md) used for golden
tests and fingerprinting.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Union

from ..values import Storage, ValueType, cast_text

# ---------------------------------------------------------------------------
# Scalar expression IR


@dataclass(frozen=True)
class SLit:
    value: Storage

    def __str__(self) -> str:
        v = self.value
        if v is None:
            return "null"
        if isinstance(v, str):
            return '"%s"' % v.replace('"', '""')
        if isinstance(v, float):
            return cast_text(v)
        return str(v)


@dataclass(frozen=True)
class SCol:
    name: str

    def __str__(self) -> str:
        return f"${self.name}"


@dataclass(frozen=True)
class SUn:
    op: str  # "-" | "not"
    a: "SExpr"

    def __str__(self) -> str:
        return f"({self.op} {self.a})"


@dataclass(frozen=True)
class SBin:
    op: str  # + - * / % & = <> < <= > >= and or
    a: "SExpr"
    b: "SExpr"

    def __str__(self) -> str:
        return f"({self.op} {self.a} {self.b})"


@dataclass(frozen=True)
class SFunc:
    name: str  # if coalesce abs round concat lower upper datetrunc datediff
    # year month like inlist notinlist
    args: tuple["SExpr", ...]

    def __str__(self) -> str:
        return "(%s %s)" % (self.name, " ".join(str(a) for a in self.args))


SExpr = Union[SLit, SCol, SUn, SBin, SFunc]


def expr_columns(e: SExpr) -> set[str]:
    if isinstance(e, SCol):
        return {e.name}
    if isinstance(e, SUn):
        return expr_columns(e.a)
    if isinstance(e, SBin):
        return expr_columns(e.a) | expr_columns(e.b)
    if isinstance(e, SFunc):
        out: set[str] = set()
        for a in e.args:
            out |= expr_columns(a)
        return out
    return set()


# ---------------------------------------------------------------------------
# Stages

ORD = "_ord"  # synthetic scan ordinal used for deterministic tie-breaking


@dataclass
class ColDef:
    name: str
    expr: SExpr
    vtype: ValueType


@dataclass
class AggDef:
    name: str
    func: str  # sum min max avg count count_if count_distinct attr
    arg: Optional[SExpr]  # None only for count
    vtype: ValueType


@dataclass
class OrderItem:
    col: str
    direction: str = "asc"  # "asc" | "desc"; nulls always sort last

    def __str__(self) -> str:
        return f"{self.col}:{self.direction}"


@dataclass
class WindowDef:
    name: str
    func: str  # lag lead rank fill_down moving_average cumulative_sum
    arg: Optional[str]  # input column; None for rank
    param: Optional[int]  # offset / window size
    partition: list[str]
    order: list[OrderItem]
    vtype: ValueType


@dataclass
class TableScan:
    table: str
    version: str
    columns: list[tuple[str, str, ValueType]]  # (source col, out col, type)


@dataclass
class SubplanScan:
    element_id: str
    plan: "Plan"
    fingerprint: str  # referenced element's core fingerprint at plan time


@dataclass
class Scan:
    out: str
    source: TableScan | SubplanScan


@dataclass
class Compute:
    out: str
    input: str
    defs: list[ColDef]
    keep: Optional[list[str]] = None  # None keeps every input column


@dataclass
class GroupBy:
    out: str
    input: str
    keys: list[str]
    aggs: list[AggDef]


@dataclass
class Window:
    out: str
    input: str
    defs: list[WindowDef]


@dataclass
class Join:
    out: str
    left: str
    right: str
    kind: str  # "left" | "inner" | "semi" | "cross"
    on: list[tuple[str, str]]
    null_safe: bool  # key joins match NULL=NULL; remote joins never do
    right_cols: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class UnionAll:
    out: str
    left: str
    right: str
    cols: list[tuple[str, str]]  # (left name, right name); output uses left's


@dataclass
class Renumber:
    out: str
    input: str
    order: list[OrderItem]
    drop: list[str] = field(default_factory=list)


@dataclass
class Filter:
    out: str
    input: str
    predicate: SExpr


@dataclass
class Project:
    out: str
    input: str
    cols: list[tuple[str, str, ValueType]]  # (source, display name, type)


@dataclass
class Sort:
    out: str
    input: str
    order: list[OrderItem]


@dataclass
class Page:
    out: str
    input: str
    limit: int
    offset: int


Stage = Union[
    Scan, Compute, GroupBy, Window, Join, UnionAll, Renumber, Filter,
    Project, Sort, Page,
]


@dataclass
class PlanMeta:
    """Side information used by caching and local derivation; not part of
    stage semantics."""

    element_id: str = ""
    core_key: str = ""  # digest of (resolved spec, controls, source versions)
    output_level: int = 0
    level_count: int = 0
    base_output: bool = False  # output rows are raw base rows
    applied_filters: int = 0
    filter_stage_levels: list[int] = field(default_factory=list)
    visible: list[str] = field(default_factory=list)  # display names
    key_columns: list[str] = field(default_factory=list)  # display names of
    # the output level's effective keys, when visible
    source_columns: list[str] = field(default_factory=list)


@dataclass
class Plan:
    stages: list[Stage]
    output: str
    schema: list[tuple[str, ValueType]]
    meta: PlanMeta = field(default_factory=PlanMeta)

    def canonical_text(self) -> str:
        return "\n".join(_stage_text(s) for s in self.stages) + (
            "\noutput %s [%s]"
            % (self.output, ", ".join(f"{n}:{t}" for n, t in self.schema))
        )

    def fingerprint(self) -> str:
        """Query id: digest of the canonical plan text (source versions are
        embedded in scan stages, so edits change the id)."""
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def unpaged_fingerprint(self) -> str:
        text = "\n".join(
            _stage_text(s) for s in self.stages if not isinstance(s, Page)
        )
        return hashlib.sha256(text.encode()).hexdigest()

    def page_stage(self) -> Optional[Page]:
        for s in self.stages:
            if isinstance(s, Page):
                return s
        return None


def _stage_text(s: Stage) -> str:
    if isinstance(s, Scan):
        src = s.source
        if isinstance(src, TableScan):
            cols = " ".join(f"{a}>{b}:{t}" for a, b, t in src.columns)
            return f"scan {s.out} table={src.table} version={src.version} {cols}"
        sub = src.plan.canonical_text().replace("\n", "\n  ")
        return (
            f"scan {s.out} element={src.element_id} fp={src.fingerprint}\n"
            f"  {sub}"
        )
    if isinstance(s, Compute):
        defs = " ".join(f"{d.name}={d.expr}:{d.vtype}" for d in s.defs)
        keep = "*" if s.keep is None else ",".join(s.keep)
        return f"compute {s.out} from={s.input} keep={keep} {defs}"
    if isinstance(s, GroupBy):
        aggs = " ".join(
            f"{a.name}={a.func}({a.arg if a.arg is not None else ''}):{a.vtype}"
            for a in s.aggs
        )
        return f"group {s.out} from={s.input} keys={','.join(s.keys)} {aggs}"
    if isinstance(s, Window):
        defs = " ".join(
            "%s=%s(%s%s) part=%s order=%s:%s"
            % (
                d.name,
                d.func,
                d.arg or "",
                f",{d.param}" if d.param is not None else "",
                ",".join(d.partition),
                ",".join(map(str, d.order)),
                d.vtype,
            )
            for d in s.defs
        )
        return f"window {s.out} from={s.input} {defs}"
    if isinstance(s, Join):
        on = ",".join(f"{a}={b}" for a, b in s.on)
        cols = ",".join(f"{a}>{b}" for a, b in s.right_cols)
        ns = "nullsafe" if s.null_safe else "strict"
        return (
            f"join {s.out} {s.kind} left={s.left} right={s.right} on={on} "
            f"{ns} cols={cols}"
        )
    if isinstance(s, UnionAll):
        cols = ",".join(f"{a}={b}" for a, b in s.cols)
        return f"union {s.out} left={s.left} right={s.right} cols={cols}"
    if isinstance(s, Renumber):
        return (
            f"renumber {s.out} from={s.input} "
            f"order={','.join(map(str, s.order))} drop={','.join(s.drop)}"
        )
    if isinstance(s, Filter):
        return f"filter {s.out} from={s.input} pred={s.predicate}"
    if isinstance(s, Project):
        cols = " ".join(f"{a}>{b}:{t}" for a, b, t in s.cols)
        return f"project {s.out} from={s.input} {cols}"
    if isinstance(s, Sort):
        return f"sort {s.out} from={s.input} order={','.join(map(str, s.order))}"
    if isinstance(s, Page):
        return f"page {s.out} from={s.input} limit={s.limit} offset={s.offset}"
    raise TypeError(f"unknown stage {s!r}")
